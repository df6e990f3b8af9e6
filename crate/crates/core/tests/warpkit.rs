use std::collections::BTreeMap;
use std::sync::OnceLock;

use acdg::raster::{luminance, FloatImage, LabelMap, Mask};
use acdg::synthworld::{
    gen_avatar, gen_garment, glyph_outfit, labels, locate, place_parts, random_outfit, render_dressed, AvatarSample,
    Category, DressedSample, Layer, OutfitComposition, PatternSpec, StyleFlags, Vec2, WorldConfig,
};
use acdg::warpkit::*;
use acdg::Error;

fn avatar(seed: u64) -> AvatarSample {
    gen_avatar(seed, &WorldConfig::default()).unwrap()
}

fn solid(seed: u64, cat: Category, c: [u8; 3]) -> Layer {
    Layer::new(gen_garment(seed, cat, &PatternSpec::solid(c)).unwrap())
}

fn dressed(seed: u64, layers: Vec<Layer>) -> DressedSample {
    render_dressed(&avatar(seed), &OutfitComposition::new(seed, layers)).unwrap()
}

fn mixed_sample(s: u64) -> DressedSample {
    let o = if s % 2 == 0 { glyph_outfit(s).unwrap() } else { random_outfit(s).unwrap() };
    render_dressed(&avatar(s), &o).unwrap()
}

/// A small U trained once for the whole file.
fn trained_u() -> &'static ReverseWarp {
    static U: OnceLock<ReverseWarp> = OnceLock::new();
    U.get_or_init(|| {
        let pairs: Vec<_> = (0..120u64).flat_map(|s| garment_pairs(&mixed_sample(s)).unwrap()).collect();
        train_reverse_warp(&pairs, &ReverseWarpConfig { steps: 400, ..Default::default() }).unwrap().0
    })
}

// ---- W ----

#[test]
fn zero_jitter_warp_matches_renderer_placement() {
    for seed in [0u64, 5, 9] {
        let s = dressed(seed, vec![solid(1, Category::Bottom, [40, 60, 200]), solid(2, Category::Top, [200, 40, 40])]);
        for (k, layer) in s.outfit.layers.iter().enumerate() {
            let w = warp_garment(&layer.garment, &s.avatar_ref, layer.slot, layer.style, Jitter::none()).unwrap();
            for (idx, hit) in s.texture_uv.iter().enumerate() {
                let Some(h) = hit.filter(|h| h.layer == k) else { continue };
                assert!(w.alpha.data[idx], "visible pixel {idx} of layer {k} missing from warp");
                assert_eq!(w.uv[idx], Some(h.uv));
            }
        }
    }
}

#[test]
fn jitter_three_moves_the_centroid_between_one_and_three_pixels() {
    let a = avatar(3);
    let top = gen_garment(7, Category::Top, &PatternSpec::solid([10, 200, 10])).unwrap();
    let base = warp_garment(&top, &a, Category::Top, StyleFlags::default(), Jitter::none()).unwrap();
    let (bx, by) = base.alpha.centroid().unwrap();
    let mean = (0..50u64)
        .map(|s| {
            let w = warp_garment(&top, &a, Category::Top, StyleFlags::default(), Jitter::new(3.0, s)).unwrap();
            let (x, y) = w.alpha.centroid().unwrap();
            ((x - bx).powi(2) + (y - by).powi(2)).sqrt()
        })
        .sum::<f32>()
        / 50.0;
    assert!((1.0..=3.0).contains(&mean), "mean centroid shift {mean}");
}

#[test]
fn warp_is_deterministic() {
    let a = avatar(1);
    let g = gen_garment(3, Category::Dress, &PatternSpec::stripes(6.0, [200, 200, 200], [20, 20, 20])).unwrap();
    for j in [Jitter::none(), Jitter::new(2.0, 11)] {
        let x = warp_garment(&g, &a, Category::Dress, StyleFlags::default(), j).unwrap();
        let y = warp_garment(&g, &a, Category::Dress, StyleFlags::default(), j).unwrap();
        assert_eq!(x.image, y.image);
        assert_eq!(x.alpha, y.alpha);
    }
}

#[test]
fn warp_rejects_wrong_slot_and_negative_jitter() {
    let a = avatar(0);
    let g = gen_garment(3, Category::Top, &PatternSpec::solid([1, 2, 3])).unwrap();
    assert!(matches!(
        warp_garment(&g, &a, Category::Bottom, StyleFlags::default(), Jitter::none()),
        Err(Error::Composition(_))
    ));
    assert!(matches!(
        warp_garment(&g, &a, Category::Top, StyleFlags::default(), Jitter::new(-1.0, 0)),
        Err(Error::Config(_))
    ));
}

// ---- H ----

#[test]
fn exact_layout_equals_rendered_parsing() {
    for seed in 0..12u64 {
        let s = mixed_sample(seed);
        let p = predict_layout(&s.outfit, &s.avatar_ref, LayoutCorruption::None).unwrap();
        assert_eq!(p.parsing, s.parsing, "seed {seed}");
    }
}

#[test]
fn strap_dropout_only_changes_strap_pixels() {
    let a = avatar(4);
    let dress = solid(5, Category::Dress, [90, 30, 120]);
    let o = OutfitComposition::new(4, vec![dress.clone()]);
    let exact = predict_layout(&o, &a, LayoutCorruption::None).unwrap();
    let corrupt = predict_layout(&o, &a, LayoutCorruption::StrapDropout).unwrap();
    let parts = place_parts(Category::Dress, &a.pose, dress.style.fit, false);
    let mut changed = 0;
    for i in 0..a.height() {
        for j in 0..a.width() {
            if exact.parsing.get(i, j) == corrupt.parsing.get(i, j) {
                continue;
            }
            changed += 1;
            let p = Vec2::new(j as f32 + 0.5, i as f32 + 0.5);
            let (part, _) = locate(&parts, p).expect("changed pixel lies on the dress");
            assert!(parts[part].strap, "pixel ({i},{j}) changed outside a strap");
        }
    }
    assert!(changed > 0);
}

#[test]
fn empty_outfit_layout_is_body_only() {
    let a = avatar(2);
    let p = predict_layout(&OutfitComposition::new(2, vec![]), &a, LayoutCorruption::None).unwrap();
    assert!(p.parsing.data.iter().all(|&l| !labels::is_garment(l)));
    assert_eq!(p.parsing, a.parsing);
}

// ---- U ----

#[test]
fn empty_pair_set_is_a_training_error() {
    assert!(matches!(train_reverse_warp(&[], &ReverseWarpConfig::default()), Err(Error::Training(_))));
}

#[test]
fn untrained_u_stays_in_rgb_range() {
    let u = ReverseWarp::new(ReverseWarpConfig::default());
    let s = mixed_sample(3);
    let out = u.reverse(&s).unwrap();
    assert!(out.data.iter().all(|v| (0.0..=255.0).contains(v)));
}

#[test]
fn training_is_deterministic() {
    let pairs: Vec<_> = (0..6u64).flat_map(|s| garment_pairs(&mixed_sample(s)).unwrap()).collect();
    let cfg = ReverseWarpConfig { steps: 15, batch: 4, ..Default::default() };
    let (_, a) = train_reverse_warp(&pairs, &cfg).unwrap();
    let (_, b) = train_reverse_warp(&pairs, &cfg).unwrap();
    assert!((a.last().unwrap() - b.last().unwrap()).abs() < 1e-6);
}

#[test]
fn u_trained_on_solids_beats_identity() {
    let colors = [[200, 40, 40], [40, 160, 60], [230, 220, 90], [60, 60, 200], [30, 30, 30], [250, 250, 250]];
    let sample = |s: u64| {
        let c = colors[s as usize % colors.len()];
        let d = colors[(s as usize + 2) % colors.len()];
        dressed(s, vec![solid(s, Category::Bottom, d), solid(s + 1, Category::Top, c)])
    };
    let train: Vec<_> = (0..40u64).flat_map(|s| garment_pairs(&sample(s)).unwrap()).collect();
    let held: Vec<_> = (500..510u64).flat_map(|s| garment_pairs(&sample(s)).unwrap()).collect();
    let (u, _) = train_reverse_warp(&train, &ReverseWarpConfig { steps: 250, ..Default::default() }).unwrap();
    let (mse_u, mse_id) = masked_errors(&u, &held).unwrap();
    assert!(mse_u < mse_id, "U {mse_u} vs identity {mse_id}");
}

#[test]
fn checkpoint_roundtrip_preserves_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.safetensors");
    let u = ReverseWarp::new(ReverseWarpConfig { seed: 9, ..Default::default() });
    u.save(&path, &BTreeMap::from([("note".to_string(), "x".to_string())])).unwrap();
    let v = ReverseWarp::load(&path).unwrap();
    let s = mixed_sample(1);
    assert_eq!(u.reverse(&s).unwrap(), v.reverse(&s).unwrap());
    let bad = acdg::checkpoint::read(&path, "autoencoder");
    assert!(matches!(bad, Err(Error::Checkpoint(_))));
}

// ---- incomplete images ----

fn check_control_invariants(c: &ControlImage, a: &AvatarSample) {
    let fill = c.skin_fill.map(|v| v as f32);
    for i in 0..a.height() {
        for j in 0..a.width() {
            let l = c.parsing.get(i, j);
            if labels::is_skin(l) {
                assert_eq!(c.image.pixel(i, j), fill);
            }
            if l == labels::BACKGROUND {
                assert_eq!(c.image.pixel(i, j), a.body_image.pixel(i, j));
            }
        }
    }
}

#[test]
fn perfect_u_recovers_unshaded_solid_colors() {
    let s = dressed(6, vec![solid(1, Category::Bottom, [30, 90, 160]), solid(2, Category::Top, [220, 120, 40])]);
    let si = make_simulated_incomplete(&s, &PerfectReverser).unwrap();
    for (idx, hit) in s.texture_uv.iter().enumerate() {
        if let Some(h) = hit {
            let want = if s.outfit.layers[h.layer].slot == Category::Top { [220.0, 120.0, 40.0] } else { [30.0, 90.0, 160.0] };
            assert_eq!(si.image.pixel(idx / 64, idx % 64), want);
        }
    }
    assert_eq!(si.kind, ControlKind::Simulated);
    check_control_invariants(&si, &s.avatar_ref);
}

/// Ink-weighted centroid over the pixels whose true texture coordinate falls
/// in a glyph box. The weight ramps the pixel's darkening relative to the
/// brightest layer pixel within 4 px, scaled by the ink/base contrast, so
/// multiplicative shading cancels.
fn ink_centroid(img: &FloatImage, s: &DressedSample, slot: Category) -> (f64, f64) {
    let k = s.outfit.index_of(slot).unwrap();
    let spec = &s.outfit.layers[k].garment.pattern_spec;
    let depth = 1.0 - luminance(spec.ink.map(|c| c as f32)) / luminance(spec.base.map(|c| c as f32));
    let boxes = &s.outfit.layers[k].garment.char_boxes;
    let in_glyph = |idx: usize| {
        s.texture_uv[idx].is_some_and(|hit| {
            hit.layer == k
                && boxes.iter().any(|b| {
                    let [u, v] = hit.uv;
                    u >= b.x - 1.0 && u <= b.x + b.w + 1.0 && v >= b.y - 1.0 && v <= b.y + b.h + 1.0
                })
        })
    };
    let mask = s.layer_mask(k);
    let (h, w) = (s.height() as i64, s.width() as i64);
    let (mut sw, mut sx, mut sy) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..h {
        for j in 0..w {
            if !in_glyph((i * w + j) as usize) {
                continue;
            }
            let mut top = 0.0f32;
            for y in (i - 4).max(0)..(i + 5).min(h) {
                for x in (j - 4).max(0)..(j + 5).min(w) {
                    if mask.get(y as usize, x as usize) {
                        top = top.max(img.luminance(y as usize, x as usize));
                    }
                }
            }
            let r = (1.0 - img.luminance(i as usize, j as usize) / top) / depth;
            let wt = ((r - 0.2) / 0.6).clamp(0.0, 1.0) as f64;
            sw += wt;
            sx += wt * (j as f64 + 0.5);
            sy += wt * (i as f64 + 0.5);
        }
    }
    (sx / sw, sy / sw)
}

#[test]
fn glyph_centroid_of_si_matches_ground_truth() {
    let u = trained_u();
    for seed in [1000u64, 1002, 1004, 1006] {
        let s = render_dressed(&avatar(seed), &glyph_outfit(seed).unwrap()).unwrap();
        let si = make_simulated_incomplete(&s, u).unwrap();
        let (gx, gy) = ink_centroid(&s.image, &s, Category::Top);
        let (x, y) = ink_centroid(&si.image, &s, Category::Top);
        let d = ((x - gx).powi(2) + (y - gy).powi(2)).sqrt();
        assert!(d <= 0.5, "seed {seed}: centroid off by {d}");
    }
}

#[test]
fn bare_avatar_si_is_skin_fill_on_body() {
    let a = avatar(8);
    let si = make_simulated_incomplete(&DressedSample::bare(&a), &PerfectReverser).unwrap();
    assert_eq!(si.skin_fill, median_face_color(&a).unwrap());
    check_control_invariants(&si, &a);
    assert!(a.parsing.data.iter().any(|&l| labels::is_skin(l)));
}

#[test]
fn inference_image_matches_simulated_for_one_exact_warp() {
    let s = dressed(11, vec![solid(4, Category::Top, [120, 200, 220])]);
    let l = &s.outfit.layers[0];
    let w = warp_garment(&l.garment, &s.avatar_ref, l.slot, l.style, Jitter::none()).unwrap();
    let p = predict_layout(&s.outfit, &s.avatar_ref, LayoutCorruption::None).unwrap();
    let mi = make_incomplete_inference(&s.avatar_ref, &[w], &p, &s.outfit.digest()).unwrap();
    let perfect = make_simulated_incomplete(&s, &PerfectReverser).unwrap();
    assert_eq!(mi.image, perfect.image);
    check_control_invariants(&mi, &s.avatar_ref);

    let learned = make_simulated_incomplete(&s, trained_u()).unwrap();
    let mask = s.garment_mask();
    let (mut se, mut n) = (0.0f64, 0usize);
    for (idx, (&a, &b)) in mi.image.data.iter().zip(&learned.image.data).enumerate() {
        if mask.data[idx % mask.data.len()] {
            se += ((a - b) as f64).powi(2);
            n += 1;
        }
    }
    let rmse = (se / n as f64).sqrt();
    assert!(rmse < 25.0, "garment rmse {rmse}");
}

#[test]
fn swapping_paste_order_swaps_occlusion() {
    let a = avatar(12);
    let top = solid(1, Category::Top, [250, 0, 0]);
    let bottom = solid(2, Category::Bottom, [0, 0, 250]);
    let o = OutfitComposition::new(12, vec![bottom.clone(), top.clone()]);
    let p = predict_layout(&o, &a, LayoutCorruption::None).unwrap();
    let wt = warp_garment(&top.garment, &a, Category::Top, top.style, Jitter::none()).unwrap();
    let wb = warp_garment(&bottom.garment, &a, Category::Bottom, bottom.style, Jitter::none()).unwrap();
    let x = make_incomplete_inference(&a, &[wb.clone(), wt.clone()], &p, "").unwrap();
    let y = make_incomplete_inference(&a, &[wt.clone(), wb.clone()], &p, "").unwrap();
    let mut overlap = 0;
    for i in 0..a.height() {
        for j in 0..a.width() {
            if wt.alpha.get(i, j) && wb.alpha.get(i, j) && labels::is_garment(p.parsing.get(i, j)) {
                overlap += 1;
                assert_eq!(x.image.pixel(i, j), [250.0, 0.0, 0.0]);
                assert_eq!(y.image.pixel(i, j), [0.0, 0.0, 250.0]);
            } else {
                assert_eq!(x.image.pixel(i, j), y.image.pixel(i, j));
            }
        }
    }
    assert!(overlap > 20, "{overlap}");
}

#[test]
fn zero_garments_fill_the_whole_body() {
    let a = avatar(13);
    let p = predict_layout(&OutfitComposition::new(13, vec![]), &a, LayoutCorruption::None).unwrap();
    let mi = make_incomplete_inference(&a, &[], &p, "").unwrap();
    check_control_invariants(&mi, &a);
    for i in 0..a.height() {
        for j in 0..a.width() {
            let l = a.parsing.get(i, j);
            if !labels::is_skin(l) {
                assert_eq!(mi.image.pixel(i, j), a.body_image.pixel(i, j), "paste locality at ({i},{j})");
            }
        }
    }
}

#[test]
fn skin_fill_is_idempotent() {
    let s = mixed_sample(14);
    let si = make_simulated_incomplete(&s, &PerfectReverser).unwrap();
    let mut twice = si.image.clone();
    fill_skin(&mut twice, &si.parsing, si.skin_fill);
    assert_eq!(twice, si.image);
}

#[test]
fn median_is_per_channel_lower_median() {
    let mut img = FloatImage::filled(2, 3, [0.0, 0.0, 0.0]);
    let mut m = Mask::new(2, 3);
    for (x, v) in [100.0f32, 200.0, 150.0].into_iter().enumerate() {
        img.set_pixel(0, x, [v, 255.0 - v, 7.0]);
        m.set(0, x, true);
    }
    let mut vals = vec![100u8, 200, 150];
    vals.sort();
    assert_eq!(median_color(&img, &m).unwrap(), [vals[1], 255 - vals[1], 7]);

    img.set_pixel(1, 0, [10.0, 10.0, 10.0]);
    m.set(1, 0, true);
    // four values 10,100,150,200: lower median is 100
    assert_eq!(median_color(&img, &m).unwrap()[0], 100);

    let uniform = FloatImage::filled(2, 2, [200.0, 180.0, 160.0]);
    let mut all = Mask::new(2, 2);
    all.data.fill(true);
    assert_eq!(median_color(&uniform, &all).unwrap(), [200, 180, 160]);
}

#[test]
fn empty_face_is_a_skin_fill_error() {
    let mut a = avatar(0);
    a.parsing = LabelMap { data: a.parsing.data.iter().map(|&l| if l == labels::FACE { labels::SKIN } else { l }).collect(), ..a.parsing };
    assert!(matches!(median_face_color(&a), Err(Error::SkinFill(_))));
    let mut s = DressedSample::bare(&a);
    s.parsing = a.parsing.clone();
    assert!(matches!(make_simulated_incomplete(&s, &PerfectReverser), Err(Error::SkinFill(_))));
}
