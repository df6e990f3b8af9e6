use acdg::diffcore::*;
use acdg::latentcore::{Autoencoder, AutoencoderConfig};
use acdg::raster::{FloatImage, View};
use acdg::synthworld::{gen_avatar, glyph_outfit, render_dressed, Category, WorldConfig};
use acdg::evalharness::glyph_region;
use acdg::warpkit::{make_simulated_incomplete, PerfectReverser};
use acdg::Error;
use acdg_grad::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sched() -> NoiseSchedule {
    build_schedule(1000, 50, ScheduleKind::ScaledLinear).unwrap()
}

fn rand_tensor(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    Tensor::from_fn([1, n], |_| rng.random_range(-2.0..2.0))
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---- schedule ----

#[test]
fn linear_schedule_matches_log_space_product() {
    let s = build_schedule(1000, 50, ScheduleKind::Linear).unwrap();
    assert_eq!(s.alphas_bar.len(), 1001);
    let mut log = 0.0f64;
    for t in 1..=1000 {
        let beta = 1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 999.0;
        log += (1.0 - beta).ln();
        assert!((s.alphas_bar[t] - log.exp()).abs() < 1e-12, "t={t}");
    }
    assert!(s.alphas_bar.windows(2).all(|w| w[1] <= w[0]));
    assert!(s.alphas_bar[1000] < 0.01);
    assert_eq!(s.alphas_bar[0], 1.0);
}

#[test]
fn scaled_linear_schedule_ends_near_zero() {
    let s = sched();
    let beta_last = 0.012f64;
    assert!(s.alphas_bar[1000] < 0.01);
    let ratio = s.alphas_bar[1000] / s.alphas_bar[999];
    assert!((ratio - (1.0 - beta_last)).abs() < 1e-12);
}

#[test]
fn horizon_one_has_two_entries_and_zero_is_rejected() {
    let s = build_schedule(1, 0, ScheduleKind::Linear).unwrap();
    assert_eq!(s.alphas_bar.len(), 2);
    assert!(s.alphas_bar[1] < 1.0);
    assert!(matches!(build_schedule(0, 0, ScheduleKind::Linear), Err(Error::Config(_))));
    assert!(matches!(build_schedule(10, 11, ScheduleKind::Linear), Err(Error::Config(_))));
}

#[test]
fn sampling_timesteps_stride_down_from_the_last() {
    let ts = sched().sampling_timesteps(20).unwrap();
    assert_eq!(ts.len(), 20);
    assert_eq!(ts[0], 999);
    assert_eq!(*ts.last().unwrap(), 49);
    assert!(ts.windows(2).all(|w| w[0] - w[1] == 50));
    assert!(sched().sampling_timesteps(21).is_err());
}

// ---- forward / inverse ----

#[test]
fn forward_noise_at_zero_is_identity_and_matches_formula() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (z0, eps) = (rand_tensor(&mut rng, 64), rand_tensor(&mut rng, 64));
    assert_eq!(forward_noise(&z0, 0, &eps, &s).unwrap(), z0);
    for _ in 0..50 {
        let t = rng.random_range(0..=1000);
        let zt = forward_noise(&z0, t, &eps, &s).unwrap();
        let ab = s.alphas_bar[t];
        for i in 0..64 {
            let expect = ab.sqrt() * z0.data()[i] + (1.0 - ab).sqrt() * eps.data()[i];
            assert!((zt.data()[i] - expect).abs() < 1e-6);
        }
    }
    assert!(matches!(forward_noise(&z0, 1001, &eps, &s), Err(Error::Schedule(_))));
    assert!(matches!(forward_noise(&z0, 3, &rand_tensor(&mut rng, 8), &s), Err(Error::Shape(_))));
}

#[test]
fn fully_noised_step_returns_the_noise() {
    let s = NoiseSchedule { kind: ScheduleKind::Linear, horizon: 2, skip: 1, alphas_bar: vec![1.0, 0.5, 0.0] };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (z0, eps) = (rand_tensor(&mut rng, 16), rand_tensor(&mut rng, 16));
    assert_eq!(forward_noise(&z0, 2, &eps, &s).unwrap(), eps);
    assert!(matches!(recover_z0(&eps, &eps, 2, &s), Err(Error::Schedule(_))));
}

#[test]
fn recover_inverts_forward_with_true_noise() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let t = rng.random_range(0..=1000);
        let (z0, eps) = (rand_tensor(&mut rng, 32), rand_tensor(&mut rng, 32));
        let zt = forward_noise(&z0, t, &eps, &s).unwrap();
        assert!(max_diff(&recover_z0(&zt, &eps, t, &s).unwrap(), &z0) < 1e-9);
    }
    let z = rand_tensor(&mut rng, 8);
    assert_eq!(recover_z0(&z, &rand_tensor(&mut rng, 8), 0, &s).unwrap(), z);
}

#[test]
fn recover_matches_formula_oracle() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let t = rng.random_range(1..=1000);
        let (zt, e) = (rand_tensor(&mut rng, 16), rand_tensor(&mut rng, 16));
        let got = recover_z0(&zt, &e, t, &s).unwrap();
        let ab = s.alphas_bar[t];
        for i in 0..16 {
            let expect = (zt.data()[i] - (1.0 - ab).sqrt() * e.data()[i]) / ab.sqrt();
            assert!((got.data()[i] - expect).abs() < 1e-6);
        }
    }
}

// ---- control initialization ----

#[test]
fn control_init_with_target_as_control_is_forward_noise() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (z0, eps) = (rand_tensor(&mut rng, 32), rand_tensor(&mut rng, 32));
    for t in 950..1000 {
        let a = control_init_latent(&z0, t, &eps, &s).unwrap();
        assert_eq!(a, forward_noise(&z0, t, &eps, &s).unwrap());
        let e_new = control_init_target(&a, &z0, t, &s).unwrap();
        assert!(max_diff(&e_new, &eps) < 1e-9);
    }
}

#[test]
fn control_init_outside_region_is_a_contract_error() {
    let s = sched();
    let z = Tensor::<f64>::zeros([1, 4]);
    for t in [0, 949, 1000] {
        assert!(matches!(control_init_latent(&z, t, &z, &s), Err(Error::Schedule(_))), "t={t}");
        assert!(matches!(control_init_target(&z, &z, t, &s), Err(Error::Schedule(_))), "t={t}");
    }
}

#[test]
fn control_init_target_is_singular_without_noise() {
    let s = NoiseSchedule { kind: ScheduleKind::Linear, horizon: 2, skip: 2, alphas_bar: vec![1.0, 1.0, 0.5] };
    let z = Tensor::<f64>::zeros([1, 4]);
    assert!(matches!(control_init_target(&z, &z, 1, &s), Err(Error::Schedule(_))));
}

#[test]
fn control_init_matches_formula_and_recovers_target() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let t = rng.random_range(950..1000);
        let (z0, zc, eps) = (rand_tensor(&mut rng, 16), rand_tensor(&mut rng, 16), rand_tensor(&mut rng, 16));
        let zn = control_init_latent(&zc, t, &eps, &s).unwrap();
        let en = control_init_target(&zn, &z0, t, &s).unwrap();
        let ab = s.alphas_bar[t];
        for i in 0..16 {
            let zi = ab.sqrt() * zc.data()[i] + (1.0 - ab).sqrt() * eps.data()[i];
            assert!((zn.data()[i] - zi).abs() < 1e-6);
            let ei = (zi - z0.data()[i] * ab.sqrt()) / (1.0 - ab).sqrt();
            assert!((en.data()[i] - ei).abs() < 1e-6);
        }
        assert!(max_diff(&recover_z0(&zn, &en, t, &s).unwrap(), &z0) < 1e-9);
    }
}

#[test]
fn near_zero_signal_control_init_is_mostly_noise() {
    let s = NoiseSchedule { kind: ScheduleKind::Linear, horizon: 3, skip: 1, alphas_bar: vec![1.0, 0.5, 1e-12, 0.0] };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (zc, eps) = (rand_tensor(&mut rng, 16), rand_tensor(&mut rng, 16));
    assert!(max_diff(&control_init_latent(&zc, 2, &eps, &s).unwrap(), &eps) < 1e-5);
}

// ---- piecewise target ----

#[test]
fn training_target_switches_branch_at_the_boundary() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (z0, zc, eps) = (rand_tensor(&mut rng, 8), rand_tensor(&mut rng, 8), rand_tensor(&mut rng, 8));
    let below = training_target(&z0, &zc, 949, &eps, &s).unwrap();
    assert_eq!(below.branch, Branch::Standard);
    assert_eq!(below.target, eps);
    assert_eq!(below.noisy, forward_noise(&z0, 949, &eps, &s).unwrap());
    let at = training_target(&z0, &zc, 950, &eps, &s).unwrap();
    assert_eq!(at.branch, Branch::ControlInit);
    assert_eq!(at.noisy, control_init_latent(&zc, 950, &eps, &s).unwrap());
    assert!(max_diff(&recover_z0(&at.noisy, &at.target, 950, &s).unwrap(), &z0) < 1e-9);
    assert!(training_target(&z0, &zc, 1000, &eps, &s).is_err());
}

#[test]
fn zero_skip_keeps_every_timestep_standard() {
    let s = build_schedule(1000, 0, ScheduleKind::ScaledLinear).unwrap();
    let z = Tensor::<f64>::full([1, 2], 0.5);
    for t in [0, 500, 950, 999] {
        assert_eq!(training_target(&z, &z, t, &z, &s).unwrap().branch, Branch::Standard);
    }
}

#[test]
fn ddim_step_with_true_noise_lands_on_the_forward_process() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (z0, eps) = (rand_tensor(&mut rng, 16), rand_tensor(&mut rng, 16));
    let zt = forward_noise(&z0, 999, &eps, &s).unwrap();
    let (next, z0_hat) = ddim_step(&zt, &eps, 999, 949, &s).unwrap();
    assert!(max_diff(&z0_hat, &z0) < 1e-9);
    assert!(max_diff(&next, &forward_noise(&z0, 949, &eps, &s).unwrap()) < 1e-9);
    let (last, _) = ddim_step(&forward_noise(&z0, 49, &eps, &s).unwrap(), &eps, 49, 0, &s).unwrap();
    assert!(max_diff(&last, &z0) < 1e-9);
}

// ---- zoom augmentation ----

fn glyph_example(seed: u64) -> (ZoomSample, acdg::synthworld::DressedSample) {
    let cfg = WorldConfig::new(96, 64).unwrap();
    let a = gen_avatar(seed, &cfg).unwrap();
    let d = render_dressed(&a, &glyph_outfit(seed).unwrap()).unwrap();
    let si = make_simulated_incomplete(&d, &PerfectReverser).unwrap();
    (ZoomSample { control: si.image, target: d.image.clone(), joints: a.joints.clone() }, d)
}

#[test]
fn unit_scale_is_a_bitwise_passthrough() {
    let (s, _) = glyph_example(2);
    let (out, view) = zoom_augment(&s, 1.0, 3).unwrap();
    assert_eq!(out, s);
    assert_eq!(view, View::full(96, 64));
}

#[test]
fn scale_outside_range_is_a_config_error() {
    let (s, _) = glyph_example(2);
    for scale in [0.2, 2.01, f32::NAN] {
        assert!(matches!(zoom_augment(&s, scale, 0), Err(Error::Config(_))), "{scale}");
    }
}

#[test]
fn half_scale_keeps_control_and_target_landmarks_aligned() {
    for seed in [10u64, 12, 14] {
        let (s, d) = glyph_example(seed);
        let region = glyph_region(&d, Category::Top).unwrap();
        let (gx, gy) = region.centroid(&s.target).unwrap();
        let (out, view) = zoom_augment(&s, 0.5, seed).unwrap();
        let (ex, ey) = view.forward((gx as f32, gy as f32), 96, 64);
        if ex < 8.0 || ey < 8.0 || ex > 56.0 || ey > 88.0 {
            continue; // glyph cut off by the window
        }
        let zr = region.resample(view, 96, 64);
        let (tx, ty) = zr.centroid(&out.target).unwrap();
        let (cx, cy) = zr.centroid(&out.control).unwrap();
        let d_tc = ((tx - cx).powi(2) + (ty - cy).powi(2)).sqrt();
        assert!(d_tc <= 0.5, "seed {seed}: control vs target {d_tc}");
        // the window magnifies 2x, so one source pixel of detector drift is two here
        let d_map = ((tx - ex as f64).powi(2) + (ty - ey as f64).powi(2)).sqrt();
        assert!(d_map <= 2.5, "seed {seed}: mapped landmark {d_map}");
    }
}

#[test]
fn double_scale_puts_content_in_the_central_half() {
    let mut img = FloatImage::new(3, 96, 64);
    for c in 0..3 {
        for i in 0..96 {
            for j in 0..64 {
                img.set(c, i, j, ((i * 7 + j * 3 + c * 11) % 200) as f32);
            }
        }
    }
    let s = ZoomSample { control: img.clone(), target: img.clone(), joints: FloatImage::new(1, 96, 64) };
    let (out, view) = zoom_augment(&s, 2.0, 0).unwrap();
    assert_eq!(view, View { x: -32.0, y: -48.0, w: 128.0, h: 192.0 });
    // inside the central half each output pixel is the mean of a 2x2 source block
    for i in 24..72 {
        for j in 16..48 {
            let (si, sj) = (2 * (i - 24), 2 * (j - 16));
            for c in 0..3 {
                let m = (img.get(c, si, sj) + img.get(c, si + 1, sj) + img.get(c, si, sj + 1) + img.get(c, si + 1, sj + 1)) / 4.0;
                assert!((out.target.get(c, i, j) - m).abs() < 1e-3);
            }
        }
    }
    assert_eq!(out.control, out.target);
}

// ---- denoiser ----

fn tiny_config() -> DenoiserConfig {
    DenoiserConfig { base_width: 8, depth: 2, groups: 2, heads: 2, embed_dim: 8, time_dim: 8, ..Default::default() }
}

fn tiny_input<E: acdg_grad::Element>(cfg: &DenoiserConfig, b: usize, rng: &mut ChaCha8Rng) -> DenoiserInput<E> {
    let mut r = |shape: [usize; 4]| Tensor::from_fn(shape, |_| E::from_f64_lossy(rng.random_range(-1.0..1.0)));
    let lc = cfg.latent_channels;
    DenoiserInput {
        noisy: r([b, lc, 8, 4]),
        joints: r([b, 1, 8, 4]),
        control: r([b, lc, 8, 4]),
        embed: Tensor::from_fn([b, cfg.embed_dim], |i| E::from_f64_lossy((i as f64 * 0.37).sin())),
        timesteps: (0..b).map(|i| 100 + 300 * i).collect(),
    }
}

#[test]
fn denoiser_output_matches_latent_shape() {
    let cfg = tiny_config();
    let (net, store) = Denoiser::build::<f32>(cfg.clone(), 0).unwrap();
    let x = tiny_input::<f32>(&cfg, 3, &mut ChaCha8Rng::seed_from_u64(0));
    let y = net.predict(&store, &x).unwrap();
    assert_eq!(y.shape(), &[3, 4, 8, 4]);
    assert!(y.is_finite());
}

#[test]
fn denoiser_rejects_inconsistent_inputs() {
    let cfg = tiny_config();
    let (net, store) = Denoiser::build::<f32>(cfg.clone(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut x = tiny_input::<f32>(&cfg, 2, &mut rng);
    x.joints = Tensor::zeros([2, 2, 8, 4]);
    assert!(matches!(net.predict(&store, &x), Err(Error::Shape(_))));
    let mut x = tiny_input::<f32>(&cfg, 2, &mut rng);
    x.noisy = Tensor::zeros([2, 4, 4, 4]);
    assert!(matches!(net.predict(&store, &x), Err(Error::Shape(_))));
    let mut x = tiny_input::<f32>(&cfg, 2, &mut rng);
    x.timesteps.pop();
    assert!(net.predict(&store, &x).is_err());
    let bad = DenoiserConfig { groups: 3, ..tiny_config() };
    assert!(matches!(Denoiser::build::<f32>(bad, 0), Err(Error::Config(_))));
}

#[test]
fn fresh_control_branch_has_no_effect_until_trained() {
    let cfg = tiny_config();
    let (net, store) = Denoiser::build::<f32>(cfg.clone(), 1).unwrap();
    let mut x = tiny_input::<f32>(&cfg, 2, &mut ChaCha8Rng::seed_from_u64(1));
    let a = net.predict(&store, &x).unwrap();
    x.control = x.control.map(|v| -3.0 * v);
    assert_eq!(net.predict(&store, &x).unwrap(), a);
}

#[test]
fn control_encoder_starts_as_a_copy_of_the_main_encoder() {
    let (_, store) = Denoiser::build::<f32>(tiny_config(), 2).unwrap();
    let mut n = 0;
    for (name, t) in store.iter() {
        if let Some(rest) = name.strip_prefix("enc.") {
            assert_eq!(store.value(store.id(&format!("ctrl.{rest}")).unwrap()), t);
            n += 1;
        }
    }
    assert!(n > 0);
}

#[test]
fn denoiser_gradient_matches_central_differences() {
    let cfg = DenoiserConfig { base_width: 2, depth: 2, groups: 1, heads: 1, embed_dim: 4, time_dim: 4, latent_channels: 2, ..Default::default() };
    let (net, mut store) = Denoiser::build::<f64>(cfg.clone(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // wake the zero-initialized paths so every parameter carries gradient
    let ids: Vec<_> = store.ids().collect();
    for &id in &ids {
        store.value_mut(id).data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    let n = store.numel();
    assert!((500..=3000).contains(&n), "{n} parameters");
    let x = tiny_input::<f64>(&cfg, 2, &mut rng);
    let target = Tensor::from_fn(x.noisy.shape().to_vec(), |_| rng.random_range(-1.0..1.0));
    let loss_of = |s: &acdg_grad::ParamStore<f64>| {
        let mut g = Graph::new();
        let l = denoiser_loss(&mut g, &net, s, &x, &target).unwrap();
        g.value(l).data()[0]
    };
    let mut g = Graph::new();
    let l = denoiser_loss(&mut g, &net, &store, &x, &target).unwrap();
    let grads = g.backward(l).unwrap();
    let pg = g.param_grads(&grads, store.len()).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..60 {
        let id = ids[rng.random_range(0..ids.len())];
        let k = rng.random_range(0..store.value(id).numel());
        let analytic = pg.get(id).unwrap().data()[k];
        let orig = store.value(id).data()[k];
        store.value_mut(id).data_mut()[k] = orig + h;
        let up = loss_of(&store);
        store.value_mut(id).data_mut()[k] = orig - h;
        let down = loss_of(&store);
        store.value_mut(id).data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-3, "worst relative error {worst}");
}

// ---- training ----

fn tiny_ae() -> Autoencoder {
    Autoencoder::new(AutoencoderConfig { widths: [4, 8, 8], ..Default::default() })
}

fn tiny_card(variant: Variant, steps: usize) -> ModelCard {
    let mut card = ModelCard::new(variant);
    card.denoiser = DenoiserConfig { base_width: 8, groups: 2, embed_dim: 8, time_dim: 8, ..Default::default() };
    card.data.count = 6;
    card.train.steps = steps;
    card.train.batch = 4;
    card.train.freeze_encoder_after = None;
    card
}

fn examples(card: &ModelCard) -> Vec<ZoomSample> {
    build_examples(&card.data, card.variant, &PerfectReverser).unwrap()
}

#[test]
fn variant_names_roundtrip() {
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
    }
    assert!(matches!("warp".parse::<Variant>(), Err(Error::Config(_))));
}

#[test]
fn training_is_bit_deterministic() {
    let ae = tiny_ae();
    let card = tiny_card(Variant::Acdg, 100);
    let ex = examples(&card);
    let (_, a) = train_denoiser(&ex, &ae, &card).unwrap();
    let (_, b) = train_denoiser(&ex, &ae, &card).unwrap();
    assert_eq!(a.losses.values, b.losses.values);
    assert!(a.zoomed_samples > 0);
}

#[test]
fn frozen_encoder_weights_do_not_move() {
    let ae = tiny_ae();
    let mut card = tiny_card(Variant::Acdg, 5);
    card.train.freeze_encoder_after = Some(0);
    let ex = examples(&card);
    let fresh = DiffusionModel::new(card.clone()).unwrap();
    let (trained, rep) = train_denoiser(&ex, &ae, &card).unwrap();
    assert_eq!(rep.encoder_frozen_at, Some(0));
    let (mut same, mut moved) = (0, 0);
    for (name, t) in fresh.store.iter() {
        let after = trained.store.value(trained.store.id(name).unwrap());
        if name.starts_with(ENCODER_PREFIX) {
            assert_eq!(after, t, "{name} moved");
            same += 1;
        } else if after != t {
            moved += 1;
        }
    }
    assert!(same > 0 && moved > 0);
}

#[test]
fn loss_decreases_over_a_thousand_steps() {
    let ae = tiny_ae();
    let mut card = tiny_card(Variant::NoZoom, 1000);
    card.train.ema_decay = None;
    let ex = examples(&card);
    let (_, rep) = train_denoiser(&ex, &ae, &card).unwrap();
    let (early, late) = (rep.losses.mean(0..100), rep.losses.mean(900..1000));
    assert!(late < early, "late {late} vs early {early}");
}

#[test]
fn sweep_epoch_uses_the_modified_branch_exactly_from_the_boundary() {
    let ae = tiny_ae();
    let mut card = tiny_card(Variant::NoZoom, 25);
    card.schedule = ScheduleConfig { horizon: 100, skip: 10, ..Default::default() };
    card.train.timesteps = TimestepSampling::Sweep;
    let ex = examples(&card);
    let (_, rep) = train_denoiser(&ex, &ae, &card).unwrap();
    assert_eq!(rep.branches.control_timesteps(), (90..100).collect::<Vec<_>>());
    assert!(rep.branches.mixed_timesteps().is_empty());
    assert!(rep.branches.standard[..90].iter().all(|&c| c == 1));
}

#[test]
fn noise_init_variant_never_uses_the_modified_branch() {
    let ae = tiny_ae();
    let mut card = tiny_card(Variant::NoiseInit, 25);
    card.schedule = ScheduleConfig { horizon: 100, skip: 10, ..Default::default() };
    card.train.timesteps = TimestepSampling::Sweep;
    let (_, rep) = train_denoiser(&examples(&card), &ae, &card).unwrap();
    assert!(rep.branches.control_timesteps().is_empty());
}

#[test]
fn warp_control_is_a_distinct_checkpoint() {
    let ae = tiny_ae();
    let a = tiny_card(Variant::Acdg, 10);
    let w = tiny_card(Variant::WarpControl, 10);
    let (ea, ew) = (examples(&a), examples(&w));
    assert_ne!(ea[0].control, ew[0].control);
    assert_eq!(ea[0].target, ew[0].target);
    let (ma, _) = train_denoiser(&ea, &ae, &a).unwrap();
    let (mw, _) = train_denoiser(&ew, &ae, &w).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (pa, pw) = (dir.path().join("a.safetensors"), dir.path().join("w.safetensors"));
    ma.save(&pa, &Default::default()).unwrap();
    mw.save(&pw, &Default::default()).unwrap();
    assert_ne!(std::fs::read(&pa).unwrap(), std::fs::read(&pw).unwrap());
    let back = DiffusionModel::load(&pw).unwrap();
    assert_eq!(back.card.variant, Variant::WarpControl);
    assert_eq!(back.store.iter().count(), mw.store.iter().count());
    for (name, t) in mw.store.iter() {
        assert_eq!(back.store.value(back.store.id(name).unwrap()), t);
    }
}

#[test]
fn mismatched_autoencoder_is_rejected() {
    let ae = Autoencoder::new(AutoencoderConfig { widths: [4, 8, 16], ..Default::default() });
    let card = tiny_card(Variant::Acdg, 1);
    assert!(matches!(train_denoiser(&examples(&card), &ae, &card), Err(Error::Shape(_))));
    assert!(matches!(train_denoiser(&[], &ae, &card), Err(Error::Training(_))));
}
