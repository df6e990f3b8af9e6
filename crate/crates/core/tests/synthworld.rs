use std::collections::BTreeSet;

use acdg::raster::quantize;
use acdg::synthworld::{
    gen_avatar, gen_garment, generate_dataset, glyph, glyph_outfit, labels, random_outfit, render_dressed, Category,
    Layer, Manifest, OutfitComposition, PatternFamily, PatternSpec, Scene, StyleFlags, Vec2, WorldConfig,
};
use acdg::Error;
use proptest::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};

fn cfg() -> WorldConfig {
    WorldConfig::default()
}

fn solid(seed: u64, cat: Category, c: [u8; 3]) -> Layer {
    Layer::new(gen_garment(seed, cat, &PatternSpec::solid(c)).unwrap())
}

#[test]
fn avatar_seed0_has_face_and_several_labels() {
    let a = gen_avatar(0, &cfg()).unwrap();
    let (x0, y0, x1, y1) = a.face_bbox;
    assert!(x0 < x1 && y0 < y1 && x1 <= 64 && y1 <= 96);
    let used: BTreeSet<u8> = a.parsing.data.iter().copied().collect();
    assert!(used.len() >= 5, "labels {used:?}");
    assert!(used.iter().all(|&l| labels::LEGEND.iter().any(|&(k, _)| k == l)));
}

#[test]
fn avatar_is_deterministic() {
    let a = gen_avatar(0, &cfg()).unwrap();
    let b = gen_avatar(0, &cfg()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn neighbouring_seeds_differ() {
    let differing = (0..100u64)
        .filter(|&s| {
            let a = gen_avatar(s, &cfg()).unwrap();
            let b = gen_avatar(s + 1, &cfg()).unwrap();
            a.skin_tone != b.skin_tone || a.pose != b.pose
        })
        .count();
    assert!(differing >= 90, "{differing}");
}

#[test]
fn resolution_below_minimum_is_rejected() {
    assert!(matches!(gen_avatar(0, &WorldConfig { height: 60, width: 48 }), Err(Error::Config(_))));
    assert!(matches!(WorldConfig::parse("96x40"), Err(Error::Config(_))));
    assert_eq!(WorldConfig::parse("128x96").unwrap(), WorldConfig { height: 128, width: 96 });
}

fn dist_to_segment(px: f32, py: f32, a: Vec2, b: Vec2) -> f32 {
    let (vx, vy) = (b.x - a.x, b.y - a.y);
    let t = (((px - a.x) * vx + (py - a.y) * vy) / (vx * vx + vy * vy)).clamp(0.0, 1.0);
    ((px - a.x - t * vx).powi(2) + (py - a.y - t * vy).powi(2)).sqrt()
}

#[test]
fn joints_are_nonzero_only_near_bones() {
    for seed in 0..5 {
        let a = gen_avatar(seed, &cfg()).unwrap();
        let bones = a.pose.bones();
        let mut lit = 0;
        for i in 0..96 {
            for j in 0..64 {
                if a.joints.get(0, i, j) > 0.0 {
                    lit += 1;
                    let d = bones
                        .iter()
                        .map(|&(p, q)| dist_to_segment(j as f32 + 0.5, i as f32 + 0.5, p, q))
                        .fold(f32::MAX, f32::min);
                    assert!(d <= 0.8 * a.pose.unit, "pixel ({j},{i}) is {d} from the skeleton");
                }
            }
        }
        assert!(lit > 100);
    }
}

#[test]
fn solid_garment_is_single_colored() {
    let g = gen_garment(0, Category::Top, &PatternSpec::solid([200, 30, 30])).unwrap();
    let mut n = 0;
    for p in g.product_image.pixels() {
        if p[3] > 0 {
            assert_eq!([p[0], p[1], p[2]], [200, 30, 30]);
            n += 1;
        }
    }
    assert!(n > 500);
}

#[test]
fn glyph_garment_contains_rasterized_string() {
    let scale = 2;
    let g = gen_garment(0, Category::Top, &PatternSpec::glyph("EA7", scale, [240, 240, 240], [10, 10, 10])).unwrap();
    let ink: Vec<(u32, u32)> =
        g.product_image.enumerate_pixels().filter(|(_, _, p)| p[0] < 128).map(|(x, y, _)| (x, y)).collect();
    let x0 = ink.iter().map(|p| p.0).min().unwrap();
    let y0 = ink.iter().map(|p| p.1).min().unwrap();
    // oracle: E's top-left pixel is inked, so the ink bbox origin is the string origin
    let text = ['E', 'A', '7'];
    let s = scale as usize;
    let oracle = |x: u32, y: u32| -> bool {
        if x < x0 || y < y0 {
            return false;
        }
        let (dx, dy) = ((x - x0) as usize / s, (y - y0) as usize / s);
        let (ci, col) = (dx / 6, dx % 6);
        ci < 3 && dy < 7 && col < 5 && glyph::glyph_rows(text[ci]).unwrap()[dy] >> (4 - col) & 1 == 1
    };
    for (x, y, p) in g.product_image.enumerate_pixels() {
        assert_eq!(p[0] < 128, oracle(x, y), "texel ({x},{y})");
    }
    assert_eq!(g.char_boxes.len(), 3);
}

fn radial_peak(g: &acdg::synthworld::GarmentAsset) -> usize {
    let n = 64;
    let mut buf: Vec<Complex<f64>> = (0..n * n)
        .map(|i| {
            let p = g.product_image.get_pixel((i % n) as u32, (i / n) as u32);
            Complex::new(p[0] as f64, 0.0)
        })
        .collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    for row in buf.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = buf[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            buf[y * n + x] = col[y];
        }
    }
    let mut bins = vec![(0.0, 0usize); n];
    for ky in 0..n {
        for kx in 0..n {
            let fy = if ky > n / 2 { ky as f64 - n as f64 } else { ky as f64 };
            let fx = if kx > n / 2 { kx as f64 - n as f64 } else { kx as f64 };
            let r = (fx * fx + fy * fy).sqrt().round() as usize;
            if r > 0 && r < n {
                bins[r].0 += buf[ky * n + kx].norm();
                bins[r].1 += 1;
            }
        }
    }
    (1..n / 2).max_by(|&a, &b| (bins[a].0 / bins[a].1 as f64).total_cmp(&(bins[b].0 / bins[b].1 as f64))).unwrap()
}

#[test]
fn stripe_spectrum_peak_tracks_frequency() {
    for f in [2.0, 4.0, 8.0] {
        let spec = PatternSpec::stripes(f, [230, 230, 230], [20, 20, 20]);
        let g1 = gen_garment(3, Category::Bottom, &spec).unwrap();
        let g2 = gen_garment(3, Category::Bottom, &PatternSpec { frequency: 2.0 * f, ..spec.clone() }).unwrap();
        assert_eq!(radial_peak(&g1), f as usize);
        assert_eq!(radial_peak(&g2), 2 * f as usize);
    }
}

#[test]
fn unknown_pattern_family_is_a_config_error() {
    assert!(matches!("plaid".parse::<PatternFamily>(), Err(Error::Config(_))));
    assert_eq!("glyph-text".parse::<PatternFamily>().unwrap(), PatternFamily::GlyphText);
    let bad: Result<acdg::synthworld::GarmentAsset, _> = serde_json::from_str(
        r#"{"seed":1,"category":"top","pattern":{"family":"paisley","base":[1,2,3]}}"#,
    );
    assert!(bad.is_err());
}

#[test]
fn garment_is_deterministic_under_seed() {
    let spec = PatternSpec { family: PatternFamily::LogoBlob, ..PatternSpec::solid([10, 200, 10]) }.with_ink([0, 0, 0]);
    let a = gen_garment(7, Category::Dress, &spec).unwrap();
    let b = gen_garment(7, Category::Dress, &spec).unwrap();
    let c = gen_garment(8, Category::Dress, &spec).unwrap();
    assert_eq!(a.product_image.as_raw(), b.product_image.as_raw());
    assert_ne!(a.product_image.as_raw(), c.product_image.as_raw());
}

#[test]
fn solid_top_pixels_are_shading_times_color() {
    let avatar = gen_avatar(2, &cfg()).unwrap();
    let outfit = OutfitComposition::new(2, vec![solid(1, Category::Top, [180, 60, 90])]);
    let d = render_dressed(&avatar, &outfit).unwrap();
    let mut n = 0;
    for i in 0..96 {
        for j in 0..64 {
            let idx = i * 64 + j;
            if d.per_garment_mask.data[idx] == labels::TOP {
                let s = d.shading[idx];
                assert!((0.72..=1.0).contains(&s));
                for (c, v) in [180.0f32, 60.0, 90.0].iter().enumerate() {
                    assert_eq!(d.image.get(c, i, j), quantize(s * v) as f32);
                }
                n += 1;
            }
        }
    }
    assert!(n > 300);
}

fn visible_count(avatar: u64, layers: Vec<Layer>, label: u8) -> usize {
    let a = gen_avatar(avatar, &cfg()).unwrap();
    let d = render_dressed(&a, &OutfitComposition::new(avatar, layers)).unwrap();
    d.per_garment_mask.count(label)
}

#[test]
fn closed_outerwear_covers_more_of_the_top() {
    for seed in 0..5 {
        let layers = |open| {
            vec![
                solid(1, Category::Top, [200, 200, 200]),
                solid(2, Category::Outerwear, [20, 40, 90]).with_style(StyleFlags { open, ..Default::default() }),
            ]
        };
        let open = visible_count(seed, layers(true), labels::TOP);
        let closed = visible_count(seed, layers(false), labels::TOP);
        assert!(closed < open, "seed {seed}: closed {closed} open {open}");
    }
}

#[test]
fn tucked_top_loses_pixels_under_the_bottom() {
    let layers = |tucked| {
        vec![
            solid(1, Category::Bottom, [30, 30, 120]),
            solid(2, Category::Top, [220, 220, 40]).with_style(StyleFlags { tucked, ..Default::default() }),
        ]
    };
    assert!(visible_count(4, layers(true), labels::TOP) < visible_count(4, layers(false), labels::TOP));
}

fn check_uv_invariant(avatar_seed: u64, outfit: &OutfitComposition) {
    let a = gen_avatar(avatar_seed, &cfg()).unwrap();
    let d = render_dressed(&a, outfit).unwrap();
    for i in 0..96 {
        for j in 0..64 {
            let idx = i * 64 + j;
            let hit = d.texture_uv[idx];
            assert_eq!(hit.is_some(), d.per_garment_mask.data[idx] != 0);
            if d.per_garment_mask.data[idx] != 0 {
                assert_ne!(d.parsing.data[idx], labels::BACKGROUND);
            }
            if let Some(h) = hit {
                let g = &outfit.layers[h.layer].garment;
                for c in 0..3 {
                    let want = d.shading[idx] * g.texture.sample(c, h.uv[0], h.uv[1]);
                    assert!((d.image.get(c, i, j) - want).abs() <= 1.0, "({j},{i}) c{c}");
                }
            }
        }
    }
}

#[test]
fn texture_uv_reconstructs_garment_pixels_on_two_avatars() {
    let outfit = glyph_outfit(5).unwrap();
    check_uv_invariant(5, &outfit);
    check_uv_invariant(6, &outfit);
}

#[test]
fn later_layers_occlude_earlier_ones() {
    let a = gen_avatar(9, &cfg()).unwrap();
    let outfit = random_outfit(9).unwrap();
    let scene = Scene::new(&a, &outfit).unwrap();
    let d = render_dressed(&a, &outfit).unwrap();
    for i in 0..96 {
        for j in 0..64 {
            let p = Vec2::new(j as f32 + 0.5, i as f32 + 0.5);
            let covering: Vec<usize> = (0..outfit.layers.len()).filter(|&k| scene.coverage(k, p).is_some()).collect();
            if let Some(&top) = covering.last() {
                assert_eq!(d.texture_uv[i * 64 + j].unwrap().layer, top);
            }
        }
    }
}

#[test]
fn shoes_above_dress_is_a_composition_error() {
    let a = gen_avatar(0, &cfg()).unwrap();
    let bad = OutfitComposition::new(0, vec![solid(1, Category::Dress, [1, 2, 3]), solid(2, Category::Shoes, [9, 9, 9])]);
    assert!(matches!(render_dressed(&a, &bad), Err(Error::Composition(_))));
    let issues = bad.issues();
    assert_eq!(issues.len(), 1);
    assert_eq!(issues[0].code, "shoes-above-dress");
    let good = OutfitComposition::new(0, vec![solid(2, Category::Shoes, [9, 9, 9]), solid(1, Category::Dress, [1, 2, 3])]);
    render_dressed(&a, &good).unwrap();
    assert!(matches!(render_dressed(&a, &OutfitComposition::new(0, vec![])), Err(Error::Composition(_))));
}

#[test]
fn flags_must_match_categories() {
    let tucked_bottom =
        solid(1, Category::Bottom, [1, 1, 1]).with_style(StyleFlags { tucked: true, ..Default::default() });
    let mut wrong_slot = solid(2, Category::Top, [1, 1, 1]);
    wrong_slot.slot = Category::Outerwear;
    let o = OutfitComposition::new(0, vec![tucked_bottom, wrong_slot]);
    let codes: Vec<String> = o.issues().into_iter().map(|i| i.code).collect();
    assert_eq!(codes, ["flag-not-applicable", "slot-mismatch"]);
}

#[test]
fn outfit_json_roundtrip_regenerates_rasters() {
    let o = random_outfit(12).unwrap();
    let json = serde_json::to_string(&o).unwrap();
    let back: OutfitComposition = serde_json::from_str(&json).unwrap();
    assert_eq!(back, o);
    assert!(!json.contains("product_image"));
}

#[test]
fn dataset_manifest_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(dir.path(), 4, 10, &cfg()).unwrap();
    let loaded = Manifest::load(dir.path()).unwrap();
    assert_eq!(loaded.header, m.header);
    assert_eq!(loaded.records, m.records);
    assert_eq!(loaded.header.legend.len(), labels::LEGEND.len());
    for r in &loaded.records {
        let (_, d) = loaded.realize(r).unwrap();
        let png = image::open(dir.path().join(&r.files.image)).unwrap().to_rgb8();
        assert_eq!(png.as_raw(), d.image.to_rgb().as_raw());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn random_outfits_satisfy_render_invariants(seed in 0u64..10_000) {
        let outfit = random_outfit(seed).unwrap();
        prop_assert!(outfit.issues().is_empty());
        check_uv_invariant(seed, &outfit);
    }
}
