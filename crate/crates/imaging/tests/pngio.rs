use enteroseg_imaging::pngio::*;
use enteroseg_imaging::volume::LabelMask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn encoded_mask_starts_with_signature() {
    let m = LabelMask::new(4, 3, vec![0; 12]).unwrap();
    let bytes = encode_mask_png(&m).unwrap();
    assert_eq!(&bytes[..8], &[0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A]);
    assert_eq!(&bytes[..8], &PNG_SIGNATURE);
}

#[test]
fn background_mask_roundtrip() {
    let m = LabelMask::new(7, 5, vec![0; 35]).unwrap();
    assert_eq!(decode_mask_png(&encode_mask_png(&m).unwrap()).unwrap(), m);
}

#[test]
fn every_label_roundtrip() {
    let m = LabelMask::new(11, 2, (0..22).map(|i| (i % 11) as u8).collect()).unwrap();
    let back = decode_mask_png(&encode_mask_png(&m).unwrap()).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.label_set(), (0..=10).collect::<Vec<u8>>());
}

#[test]
fn thousand_random_masks_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let (w, h) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let m = LabelMask::new(w, h, (0..w * h).map(|_| rng.gen_range(0..=10)).collect()).unwrap();
        assert_eq!(decode_mask_png(&encode_mask_png(&m).unwrap()).unwrap(), m);
    }
}

#[test]
fn palette_is_eleven_distinct_colours() {
    let mut p = PALETTE.to_vec();
    p.sort();
    p.dedup();
    assert_eq!(p.len(), 11);
    assert_eq!(PALETTE[0], [0, 0, 0]);
}

#[test]
fn rejects_indices_beyond_ten() {
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, 2, 1);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(vec![0u8; 16 * 3]);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[3, 12]).unwrap();
    }
    assert!(decode_mask_png(&bytes).is_err());
}

#[test]
fn rejects_non_indexed_mask_and_out_of_range_labels() {
    let gray = encode_gray_png(2, 2, &[0, 1, 2, 3]).unwrap();
    assert!(decode_mask_png(&gray).is_err());
    let bad = LabelMask { width: 1, height: 1, labels: vec![11] };
    assert!(encode_mask_png(&bad).is_err());
}

#[test]
fn grayscale_roundtrip_and_quantize() {
    let px: Vec<u8> = (0..=255).collect();
    let bytes = encode_gray_png(16, 16, &px).unwrap();
    assert_eq!(decode_gray_png(&bytes).unwrap(), (16, 16, px));
    assert_eq!(quantize(&[-1.0, 0.0, 0.5, 1.0, 2.0], 0.0, 1.0), vec![0, 0, 128, 255, 255]);
}
