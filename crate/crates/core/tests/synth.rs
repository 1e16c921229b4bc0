use fillerkit_core::signal::{AudioClip, WORKING_RATE};
use fillerkit_core::synth::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent SNR measurement from the stems of a mixture: speech-active
/// samples follow the 19 dB peak rule on the speech stem.
fn measured_snr(r: &MixResult, stem: &Stem) -> f64 {
    let peak = r.speech.iter().fold(0.0f64, |a, v| a.max(v.abs() as f64));
    let frame_active: Vec<bool> = r
        .speech
        .chunks(160)
        .map(|f| {
            let p = f.iter().fold(0.0f64, |a, v| a.max(v.abs() as f64));
            p > 0.0 && p >= peak * 10f64.powf(-19.0 / 20.0) * (1.0 - 1e-9)
        })
        .collect();
    let (a, b) = stem.span;
    let region: Vec<usize> = (a..b).filter(|&i| frame_active[i / 160]).collect();
    let all_active: Vec<usize> = (0..r.speech.len()).filter(|&i| frame_active[i / 160]).collect();
    let rms = |x: &[f32], idx: &[usize]| {
        (idx.iter().map(|&i| (x[i] as f64).powi(2)).sum::<f64>() / idx.len().max(1) as f64).sqrt()
    };
    let span: Vec<usize> = (a..b).collect();
    let src_region = rms(&stem.samples, &region);
    let src_span = rms(&stem.samples, &span);
    if !region.is_empty() && src_region >= 0.1 * src_span && src_region > 0.0 {
        20.0 * (rms(&r.speech, &region) / src_region).log10()
    } else {
        20.0 * (rms(&r.speech, &all_active) / src_span).log10()
    }
}

#[test]
fn mixtures_hit_target_snr() {
    let pools = SourcePools::synthetic(&SyntheticSourceConfig::default(), Split::Train, 3);
    let cfg = CorpusConfig {
        duration_s: 2.0,
        snr: SnrConfig {
            p_music: 0.5,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut checked = 0;
    for i in 0..40 {
        let r = synthesize_mixture(&pools, &cfg, mixture_seed(7, i)).unwrap();
        assert_eq!(r.labels.len(), 200);
        for stem in &r.stems {
            let snr = measured_snr(&r, stem);
            assert!((snr - stem.snr_db).abs() < 0.1, "{snr} vs {}", stem.snr_db);
            checked += 1;
        }
        assert!(r.audio.peak() <= 0.99 + 1e-6);
    }
    assert!(checked >= 40);
}

#[test]
fn snr_ranges_are_respected() {
    let pools = SourcePools::synthetic(&SyntheticSourceConfig::default(), Split::Test, 1);
    let cfg = CorpusConfig::default();
    for i in 0..30 {
        let r = synthesize_mixture(&pools, &cfg, mixture_seed(1, i)).unwrap();
        for s in &r.stems {
            let (lo, hi) = match s.role {
                SourceRole::Background => cfg.snr.background,
                SourceRole::Foreground => cfg.snr.foreground,
                SourceRole::Music => cfg.snr.music,
            };
            assert!(s.snr_db >= lo && s.snr_db <= hi);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn labels_are_gain_invariant(seed in any::<u64>(), gain in 0.01f32..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = rng.gen_range(1..4000);
        let samples: Vec<f32> = (0..n).map(|i| {
            let env = ((i / 300) % 3) as f32 * 0.4;
            env * rng.gen_range(-1.0f32..1.0)
        }).collect();
        let a = AudioClip::new(samples.clone(), WORKING_RATE).unwrap();
        let b = AudioClip::new(samples.iter().map(|v| v * gain).collect(), WORKING_RATE).unwrap();
        let la = label_speech_frames(&a);
        prop_assert_eq!(la.len(), n.div_ceil(160));
        prop_assert_eq!(la, label_speech_frames(&b));
    }
}
