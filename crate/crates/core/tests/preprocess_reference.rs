use picsearch_core::{preprocess, ChannelOrder, PreprocessSpec, ResizeMode, RgbImage};
use proptest::prelude::*;

/// Bilinear sampling written as a sum over every source pixel with a
/// triangle kernel, so it shares no indexing code with the fast path.
fn reference(image: &RgbImage, spec: &PreprocessSpec) -> Vec<f64> {
    let (w, h) = (image.width() as f64, image.height() as f64);
    let (tw, th) = (spec.target_width as usize, spec.target_height as usize);
    let (rw, rh) = match spec.resize_mode {
        ResizeMode::Stretch => (tw as f64, th as f64),
        ResizeMode::ShorterSideCenterCrop => {
            let s = f64::max(tw as f64 / w, th as f64 / h);
            ((w * s).round().max(tw as f64), (h * s).round().max(th as f64))
        }
    };
    let (ox, oy) = (((rw - tw as f64) / 2.0).floor(), ((rh - th as f64) / 2.0).floor());
    let tri = |d: f64| (1.0 - d.abs()).max(0.0);
    let mut out = vec![0.0; 3 * tw * th];
    for c in 0..3 {
        let src_c = if spec.channel_order == ChannelOrder::Bgr { 2 - c } else { c };
        for ty in 0..th {
            let py = ((ty as f64 + oy + 0.5) * (h / rh) - 0.5).clamp(0.0, h - 1.0);
            for tx in 0..tw {
                let px = ((tx as f64 + ox + 0.5) * (w / rw) - 0.5).clamp(0.0, w - 1.0);
                let mut acc = 0.0;
                for sy in 0..image.height() {
                    for sx in 0..image.width() {
                        let k = tri(px - sx as f64) * tri(py - sy as f64);
                        acc += k * image.pixel(sx, sy)[src_c] as f64;
                    }
                }
                let v = (acc * spec.scale as f64 - spec.mean[c] as f64) / spec.std[c] as f64;
                out[(c * th + ty) * tw + tx] = v;
            }
        }
    }
    out
}

fn arb_image() -> impl Strategy<Value = RgbImage> {
    (1u32..=8, 1u32..=8).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), (w * h * 3) as usize)
            .prop_map(move |data| RgbImage::new(w, h, data).unwrap())
    })
}

fn arb_spec() -> impl Strategy<Value = PreprocessSpec> {
    (
        1u32..=8,
        1u32..=8,
        prop_oneof![Just(ChannelOrder::Rgb), Just(ChannelOrder::Bgr)],
        prop_oneof![Just(ResizeMode::Stretch), Just(ResizeMode::ShorterSideCenterCrop)],
        prop_oneof![Just(1.0f32 / 255.0), Just(1.0f32)],
    )
        .prop_map(|(tw, th, order, mode, scale)| PreprocessSpec {
            target_width: tw,
            target_height: th,
            channel_order: order,
            scale,
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
            resize_mode: mode,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn matches_the_scalar_reference(image in arb_image(), spec in arb_spec()) {
        let t = preprocess(&image, &spec);
        prop_assert_eq!(t.shape(), [3, spec.target_height as usize, spec.target_width as usize]);
        let want = reference(&image, &spec);
        for (i, (got, want)) in t.data.iter().zip(&want).enumerate() {
            // Relative for the unscaled 0..=255 variant, whose values exceed 1.
            let tol = if spec.scale == 1.0 { 1e-6 * want.abs().max(1.0) } else { 1e-6 };
            prop_assert!((*got as f64 - want).abs() <= tol, "index {}: {} vs {}", i, got, want);
        }
    }
}

#[test]
fn identity_size_is_exact() {
    let img = RgbImage::from_fn(3, 2, |x, y| [x as u8 * 80, y as u8 * 100, 7]).unwrap();
    let spec = PreprocessSpec {
        target_width: 3,
        target_height: 2,
        scale: 1.0,
        mean: [0.0; 3],
        std: [1.0; 3],
        ..PreprocessSpec::imagenet(3)
    };
    let t = preprocess(&img, &spec);
    for y in 0..2 {
        for x in 0..3 {
            let p = img.pixel(x, y);
            for c in 0..3 {
                assert_eq!(t.at(c, y as usize, x as usize), p[c] as f32);
            }
        }
    }
}
