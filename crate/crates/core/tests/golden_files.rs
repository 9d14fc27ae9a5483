mod common;

use std::collections::BTreeMap;

use fedsilo::numkit::{Matrix, Vector};
use fedsilo::transform::AffineTransform;
use fedsilo::transport::{deserialize, serialize, Checkpoint};

#[test]
fn round_message_matches_golden() {
    let msg = common::golden_message();
    let bytes = serialize(&msg);
    common::check_golden("local_update.flam", &bytes).unwrap();
    let stored = std::fs::read(common::golden_dir().join("local_update.flam")).unwrap();
    assert_eq!(deserialize(&stored).unwrap(), msg);
    let header: [u8; 23] = [
        b'F', b'L', b'A', b'M', 1, 0, 1, 2, 0, 0, 0, 5, 0, 0, 0, 3, 0, 0, 0, 4, 0, 0, 0,
    ];
    assert_eq!(&stored[..23], &header);
    // four blocks: 2-byte length, "layerN.weight" or "layerN.bias", rows and cols
    let names = 2 * (2 + 13 + 8) + 2 * (2 + 11 + 8);
    assert_eq!(stored.len(), 23 + names + 8 * 17 + 4);
    assert_eq!(&stored[stored.len() - 4..], &crc32_reference(&stored[..stored.len() - 4]).to_le_bytes());
}

#[test]
fn checkpoint_matches_golden() {
    let params = common::golden_message().params;
    let f = AffineTransform::new(
        Matrix::from_rows(&[vec![1.5, -0.5], vec![0.25, 2.0]]).unwrap(),
        Vector::from(vec![0.125, -3.0]),
    )
    .unwrap();
    let ck = Checkpoint {
        epoch: 4,
        round: 20,
        params,
        transforms: BTreeMap::from([(1, f)]),
    };
    common::check_golden("checkpoint.flam", &ck.to_bytes()).unwrap();
    let stored = std::fs::read(common::golden_dir().join("checkpoint.flam")).unwrap();
    assert_eq!(Checkpoint::from_bytes(&stored).unwrap(), ck);
}

/// Bitwise CRC-32 (IEEE), written out so the check does not reuse the
/// implementation under test.
fn crc32_reference(bytes: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= u32::from(b);
        for _ in 0..8 {
            crc = if crc & 1 == 1 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
        }
    }
    !crc
}
