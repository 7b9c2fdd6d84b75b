//! Encodes tensor and control messages, shows the header bytes and the
//! compression ratio, and decodes a few malformed buffers.

use coinfer::engine::{decode_message, encode_message, MsgType, Tensor, WireMessage};

fn main() {
    let smooth = Tensor::f32(vec![256, 32], (0..256 * 32).map(|i| (i / 32) as f32 * 0.5).collect());
    let edges = Tensor::i32(vec![256, 10], (0..2560).map(|i| i % 256).collect());
    for compress in [false, true] {
        let msg = WireMessage::with_tensors(MsgType::Tensors, 42, &[&smooth, &edges], compress);
        let bytes = encode_message(&msg);
        let raw = msg.raw_payload().unwrap().len();
        println!("compress={compress:<5} {} bytes on the wire, payload {raw} -> {}", bytes.len(), msg.payload.len());
        println!("  header {:02x?}", &bytes[..19]);
        let (back, _) = decode_message(&bytes).unwrap();
        assert_eq!(back.tensors().unwrap(), vec![smooth.clone(), edges.clone()]);
    }

    let ack = encode_message(&WireMessage::control(MsgType::Ack, 42));
    let mut wrong_version = ack.clone();
    wrong_version[4] = 9;
    for (what, buf) in [("short", &ack[..7]), ("version", &wrong_version[..]), ("ok", &ack[..])] {
        match decode_message(buf) {
            Ok((m, n)) => println!("{what:<8} decoded {:?} frame {} from {n} bytes", m.msg_type, m.frame_id),
            Err(e) => println!("{what:<8} rejected: {e}"),
        }
    }
}
