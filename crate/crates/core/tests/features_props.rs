mod support;

use std::path::PathBuf;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use klassify_core::features::{
    apply_stats, extract_features, read_features, write_features, fit_stats, kinematics, lab_color_shift, laplacian_blurriness, grayscale, non_mouth_mse,
    FeatureConfig, FeatureSequence, FrameTensorStream, LandmarkFrame, LandmarkSequence, LipConfig, MouthRoi, RgbImage, RgbView,
    BASE_CHANNELS, FEATURE_CHANNELS,
};
use klassify_core::synth::{generate_clip, SynthSpec};

fn image(w: usize, h: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(any::<u8>(), w * h * 3)
}

fn golden_clip() -> klassify_core::synth::SynthClip {
    let spec = SynthSpec { clips: 1, frames_min: 32, frames_max: 32, seed: 7, fake_fraction: 1.0, ..SynthSpec::default() };
    generate_clip(&spec, 0)
}

proptest! {
    #[test]
    fn mse_and_lab_shift_are_symmetric(a in image(9, 7), b in image(9, 7)) {
        let (va, vb) = (RgbView::new(9, 7, &a).unwrap(), RgbView::new(9, 7, &b).unwrap());
        let roi = MouthRoi { x0: 2, y0: 1, x1: 6, y1: 5 };
        prop_assert_eq!(non_mouth_mse(va, vb, &roi).unwrap(), non_mouth_mse(vb, va, &roi).unwrap());
        prop_assert!((lab_color_shift(va, vb).unwrap() - lab_color_shift(vb, va).unwrap()).abs() < 1e-12);
        prop_assert_eq!(non_mouth_mse(va, va, &roi).unwrap(), 0.0);
        prop_assert_eq!(lab_color_shift(va, va).unwrap(), 0.0);
    }

    #[test]
    fn constant_image_has_zero_blur(rgb in prop::array::uniform3(any::<u8>()), w in 3usize..12, h in 3usize..12) {
        let img = RgbImage::filled(w, h, rgb);
        prop_assert_eq!(laplacian_blurriness(&grayscale(img.view())).unwrap(), 0.0);
    }

    #[test]
    fn blur_matches_oracle(img in image(8, 6)) {
        let got = laplacian_blurriness(&grayscale(RgbView::new(8, 6, &img).unwrap())).unwrap();
        let want = support::laplacian_variance_oracle(&support::gray_oracle(&img), 8, 6);
        prop_assert!((got - want).abs() <= 1e-9 * want.max(1.0));
    }

    #[test]
    fn kinematics_translation_invariant(seed in any::<u64>(), dx in -0.2f64..0.2, dy in -0.2f64..0.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t_len = rng.gen_range(1..30);
        let frames: Vec<LandmarkFrame> = (0..t_len)
            .map(|i| LandmarkFrame { index: i, points: (0..4).map(|_| [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)]).collect() })
            .collect();
        let lips = LipConfig { lips: vec![0, 1, 2, 3], top: 0, bottom: 1, left: 2, right: 3 };
        let seq = LandmarkSequence { frames: frames.clone(), width: 32, height: 32, fps: 25.0 };
        let moved = LandmarkSequence {
            frames: frames.iter().map(|f| LandmarkFrame { index: f.index, points: f.points.iter().map(|p| [p[0] + dx, p[1] + dy]).collect() }).collect(),
            ..seq.clone()
        };
        let (a, b) = (kinematics(&seq, &lips), kinematics(&moved, &lips));
        for (x, y) in [(&a.velocity, &b.velocity), (&a.acceleration, &b.acceleration), (&a.jerk, &b.jerk), (&a.jitter, &b.jitter)] {
            for (u, v) in x.iter().zip(y.iter()) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn difference_channels_are_first_differences(rows in prop::collection::vec(prop::array::uniform8(-5.0f64..5.0), 1..40)) {
        let seq = FeatureSequence::from_base(&rows, 25.0);
        for t in 0..rows.len() {
            for k in 0..BASE_CHANNELS {
                let d = seq.data.get(t, BASE_CHANNELS + k);
                let want = if t == 0 { 0.0 } else { rows[t][k] - rows[t - 1][k] };
                prop_assert_eq!(d, want);
            }
        }
    }
}

#[test]
fn synthetic_clip_features_are_finite() {
    let spec = SynthSpec { clips: 6, seed: 2, ..SynthSpec::default() };
    for i in 0..spec.clips {
        let clip = generate_clip(&spec, i);
        let f = extract_features(&clip.landmarks, &clip.frames, &FeatureConfig::default()).unwrap();
        assert_eq!(f.data.cols(), FEATURE_CHANNELS);
        assert_eq!(f.len(), clip.frames.len());
        assert!(f.data.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn static_frames_have_zero_motion_channels() {
    let clip = golden_clip();
    let n = clip.frames.len();
    let first = clip.frames.frame(0);
    let frame_bytes = first.data.to_vec();
    let data: Vec<u8> = (0..n).flat_map(|_| frame_bytes.iter().copied()).collect();
    let frames = FrameTensorStream::new(n, clip.frames.width(), clip.frames.height(), data).unwrap();
    let mut landmarks = clip.landmarks.clone();
    for f in landmarks.frames.iter_mut() {
        f.points = clip.landmarks.frames[0].points.clone();
    }
    let f = extract_features(&landmarks, &frames, &FeatureConfig::default()).unwrap();
    for t in 0..n {
        // non-mouth MSE, colour shift and all kinematics vanish
        for k in [1, 2, 4, 5, 6] {
            assert_eq!(f.data.get(t, k), 0.0, "t={t} channel {k}");
        }
        assert!(f.data.get(t, 7).abs() < 1e-12);
        for k in BASE_CHANNELS..FEATURE_CHANNELS {
            assert!(f.data.get(t, k).abs() < 1e-12, "t={t} channel {k}");
        }
    }
}

#[test]
fn length_mismatch_rejected() {
    let clip = golden_clip();
    let mut landmarks = clip.landmarks.clone();
    landmarks.frames.pop();
    assert!(extract_features(&landmarks, &clip.frames, &FeatureConfig::default()).is_err());
}

#[test]
fn normalization_is_standard() {
    let spec = SynthSpec { clips: 4, seed: 5, ..SynthSpec::default() };
    let seqs: Vec<FeatureSequence> = (0..4)
        .map(|i| {
            let c = generate_clip(&spec, i);
            extract_features(&c.landmarks, &c.frames, &FeatureConfig::default()).unwrap()
        })
        .collect();
    let refs: Vec<&FeatureSequence> = seqs.iter().collect();
    let stats = fit_stats(&refs).unwrap();
    let normed: Vec<FeatureSequence> = seqs.iter().map(|s| apply_stats(s, &stats)).collect();
    let total: usize = normed.iter().map(|s| s.len()).sum();
    for k in 0..FEATURE_CHANNELS {
        let vals: Vec<f64> = normed.iter().flat_map(|s| (0..s.len()).map(move |t| s.data.get(t, k))).collect();
        let mean = vals.iter().sum::<f64>() / total as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / total as f64;
        assert!(mean.abs() < 1e-9, "channel {k} mean {mean}");
        assert!(var < 1e-9 || (var - 1.0).abs() < 1e-9, "channel {k} var {var}");
    }
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden_features_32.txt")
}

fn render(seq: &FeatureSequence) -> String {
    let mut out = String::new();
    for t in 0..seq.len() {
        let row: Vec<String> = seq.data.row(t).iter().map(|v| format!("{:016x}", v.to_bits())).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

#[test]
fn golden_feature_matrix() {
    let clip = golden_clip();
    let f = extract_features(&clip.landmarks, &clip.frames, &FeatureConfig::default()).unwrap();
    let got = render(&f);
    if std::env::var_os("KLASSIFY_BLESS").is_some() {
        std::fs::write(golden_path(), &got).unwrap();
    }
    let want = std::fs::read_to_string(golden_path()).expect("golden fixture missing; run with KLASSIFY_BLESS=1");
    assert_eq!(got, want);
}

#[test]
fn feature_file_round_trip_is_exact_in_f32() {
    let clip = golden_clip();
    let f = extract_features(&clip.landmarks, &clip.frames, &FeatureConfig::default()).unwrap();
    let mut buf = Vec::new();
    write_features(&mut buf, &f).unwrap();
    assert_eq!(buf.len(), 20 + f.len() * FEATURE_CHANNELS * 4);
    let back = read_features(&buf[..]).unwrap();
    assert_eq!(back.len(), f.len());
    for (a, b) in back.data.data().iter().zip(f.data.data()) {
        assert_eq!(*a, *b as f32 as f64);
    }
}
