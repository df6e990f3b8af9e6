use acdg::diffcore::{DenoiserConfig, DiffusionModel, ModelCard, Variant};
use acdg::inferpipe::*;
use acdg::latentcore::{Autoencoder, AutoencoderConfig};
use acdg::synthworld::{gen_avatar, glyph_outfit, AvatarSample, OutfitComposition, WorldConfig};
use acdg::warpkit::Jitter;
use acdg::Error;

fn tiny_bundle(variant: Variant) -> ModelBundle {
    let ae = Autoencoder::new(AutoencoderConfig { widths: [4, 8, 8], ..Default::default() });
    let mut card = ModelCard::new(variant);
    card.denoiser = DenoiserConfig { base_width: 8, groups: 2, embed_dim: 8, time_dim: 8, ..Default::default() };
    ModelBundle::new(ae, DiffusionModel::new(card).unwrap()).unwrap()
}

fn avatar(seed: u64) -> AvatarSample {
    gen_avatar(seed, &WorldConfig::default()).unwrap()
}

fn composed(seed: u64, outfit: &OutfitComposition) -> ComposedControl {
    compose_control(outfit, &avatar(seed), Jitter::none()).unwrap()
}

#[test]
fn compose_without_jitter_is_deterministic() {
    let o = glyph_outfit(3).unwrap();
    let a = composed(3, &o);
    assert_eq!(a, composed(3, &o));
    let j = compose_control(&o, &avatar(3), Jitter::new(3.0, 1)).unwrap();
    assert_ne!(a.control.image, j.control.image);
    assert_eq!(a.joints, avatar(3).joints);
}

#[test]
fn compose_rejects_a_foreign_avatar_and_bad_layering() {
    let o = glyph_outfit(3).unwrap();
    assert!(matches!(compose_control(&o, &avatar(4), Jitter::none()), Err(Error::Composition(_))));
    let mut twice = o.clone();
    twice.layers.push(twice.layers.last().unwrap().clone());
    assert!(compose_control(&twice, &avatar(3), Jitter::none()).is_err());
}

#[test]
fn zoom_window_parsing_and_validation() {
    let w: ZoomWindow = "16, 24,32,48".parse().unwrap();
    assert_eq!(w, ZoomWindow { x: 16, y: 24, w: 32, h: 48 });
    assert!(w.validate(96, 64).is_ok());
    assert!(ZoomWindow::full(96, 64).validate(96, 64).is_ok());
    for bad in ["1,2,3", "a,b,c,d", "1,2,3,4,5", "-1,0,32,48"] {
        assert!(matches!(bad.parse::<ZoomWindow>(), Err(Error::Config(_))), "{bad}");
    }
    for w in [
        ZoomWindow { x: 40, y: 0, w: 32, h: 48 },
        ZoomWindow { x: 0, y: 0, w: 32, h: 32 },
        ZoomWindow { x: 0, y: 0, w: 0, h: 0 },
        ZoomWindow { x: 0, y: 60, w: 32, h: 48 },
    ] {
        assert!(w.validate(96, 64).is_err(), "{w:?}");
    }
}

#[test]
fn full_window_zoom_job_is_the_full_job() {
    let c = composed(5, &glyph_outfit(5).unwrap());
    let job = zoom_job(&c.control.image, &c.joints, ZoomWindow::full(96, 64), 9).unwrap();
    assert_eq!(job.control, c.control.image);
    assert_eq!(job.joints, c.joints);
    let half = zoom_job(&c.control.image, &c.joints, "16,24,32,48".parse().unwrap(), 9).unwrap();
    assert_eq!((half.control.height, half.control.width), (96, 64));
    // a 2x magnification puts source pixel (16,24) at output pixel (0,0)'s corner
    let expect = c.control.image.sample(0, 16.25, 24.25);
    assert!((half.control.get(0, 0, 0) - expect).abs() < 1e-4);
}

#[test]
fn missing_checkpoint_files_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    match ModelBundle::load(dir.path()) {
        Err(Error::Checkpoint(m)) => assert!(m.contains(AUTOENCODER_FILE) && m.contains("not found"), "{m}"),
        other => panic!("expected checkpoint error, got {:?}", other.err()),
    }
}

#[test]
fn incompatible_checkpoints_are_rejected() {
    let ae = Autoencoder::new(AutoencoderConfig { widths: [4, 8, 16], ..Default::default() });
    let mut card = ModelCard::new(Variant::Acdg);
    card.denoiser = DenoiserConfig { base_width: 8, groups: 2, embed_dim: 8, time_dim: 8, ..Default::default() };
    let r = ModelBundle::new(ae, DiffusionModel::new(card).unwrap());
    assert!(matches!(r, Err(Error::Checkpoint(_))));
}

#[test]
fn bundle_roundtrips_through_a_directory() {
    let b = tiny_bundle(Variant::Acdg);
    let dir = tempfile::tempdir().unwrap();
    b.ae.save(&dir.path().join(AUTOENCODER_FILE), &Default::default()).unwrap();
    b.model.save(&dir.path().join(DENOISER_FILE), &Default::default()).unwrap();
    let back = ModelBundle::load(dir.path()).unwrap();
    let c = composed(1, &glyph_outfit(1).unwrap());
    let opts = SamplerOptions::default();
    let x = generate_full(&b, &c.control.image, &c.joints, 4, opts).unwrap();
    let y = generate_full(&back, &c.control.image, &c.joints, 4, opts).unwrap();
    assert_eq!(x.image, y.image);
}

#[test]
fn one_cycle_of_twenty_evaluations_whatever_the_garment_count() {
    let b = tiny_bundle(Variant::Acdg);
    let full = glyph_outfit(2).unwrap();
    let mut single = full.clone();
    single.layers.truncate(1);
    for o in [&single, &full] {
        let c = composed(2, o);
        let r = generate_full(&b, &c.control.image, &c.joints, 0, SamplerOptions::default()).unwrap();
        assert_eq!(r.evaluations(), 20);
        assert_eq!(r.trace[0].t, 999);
        assert_eq!(r.trace.last().unwrap().t_next, 0);
        assert!(r.trace.windows(2).all(|w| w[0].t_next == w[1].t));
    }
}

#[test]
fn fixed_seed_is_bit_identical_and_seeds_differ() {
    let b = tiny_bundle(Variant::Acdg);
    let c = composed(6, &glyph_outfit(6).unwrap());
    let run = |seed| generate_full(&b, &c.control.image, &c.joints, seed, SamplerOptions::default()).unwrap().image;
    let a = run(11);
    assert_eq!(a.data, run(11).data);
    assert_ne!(a.data, run(12).data);
}

#[test]
fn batching_does_not_change_results() {
    let b = tiny_bundle(Variant::Acdg);
    let c1 = composed(7, &glyph_outfit(7).unwrap());
    let c2 = composed(8, &glyph_outfit(8).unwrap());
    let jobs = vec![
        Job { control: c1.control.image.clone(), joints: c1.joints.clone(), seed: 1 },
        Job { control: c2.control.image.clone(), joints: c2.joints.clone(), seed: 2 },
    ];
    let batch = generate_batch(&b, &jobs, SamplerOptions::default()).unwrap();
    for (job, r) in jobs.iter().zip(&batch) {
        let solo = generate_batch(&b, std::slice::from_ref(job), SamplerOptions::default()).unwrap().remove(0);
        let diff = r.image.data.iter().zip(&solo.image.data).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(diff < 1e-3, "batched vs solo differ by {diff}");
    }
}

#[test]
fn kept_latents_follow_the_trace() {
    let b = tiny_bundle(Variant::NoiseInit);
    let c = composed(9, &glyph_outfit(9).unwrap());
    let opts = SamplerOptions { steps: 5, keep_latents: true };
    let r = generate_full(&b, &c.control.image, &c.joints, 0, opts).unwrap();
    let l = r.latents.unwrap();
    assert_eq!(l.len(), 5);
    assert_eq!(l[0].shape(), &[1, 4, 24, 16]);
    assert_eq!(r.trace.iter().map(|s| s.t).collect::<Vec<_>>(), vec![999, 949, 899, 849, 799]);
    assert_eq!(r.trace.last().unwrap().t_next, 0);
}

#[test]
fn zoom_generation_has_base_resolution() {
    let b = tiny_bundle(Variant::Acdg);
    let c = composed(10, &glyph_outfit(10).unwrap());
    let w: ZoomWindow = "8,12,48,72".parse().unwrap();
    let r = generate_zoom(&b, &c.control.image, &c.joints, w, 3, SamplerOptions::default()).unwrap();
    assert_eq!((r.image.height, r.image.width), (96, 64));
    assert_eq!(r.evaluations(), 20);
    let bad: ZoomWindow = "8,12,48,48".parse().unwrap();
    assert!(generate_zoom(&b, &c.control.image, &c.joints, bad, 3, SamplerOptions::default()).is_err());
}
