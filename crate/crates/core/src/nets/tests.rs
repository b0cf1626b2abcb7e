use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{grad_check, Tape, GRAD_CHECK_EPS, GRAD_CHECK_TOL};
use crate::matcheval::Assignment;
use crate::raster::rasterize;
use crate::sketch::TokenGrid;
use crate::synthgen::{sample_sketch, GeneratorConfig, RandomSource};

fn tiny_transformer() -> TransformerConfig {
    TransformerConfig { layers: 1, heads: 2, d_model: 16, d_ff: 32, patch: 8 }
}

fn tiny_srn() -> SrnModel {
    SrnModel::new(SrnConfig { transformer: tiny_transformer(), image_size: 32 }, 1).unwrap()
}

fn tiny_spn() -> SpnModel {
    SpnModel::new(
        SpnConfig { transformer: tiny_transformer(), image_size: 32, backbone_channels: 4, backbone_layers: 2 },
        2,
    )
    .unwrap()
}

fn sample(seed: u64) -> (TokenGrid, crate::sketch::Sketch) {
    sample_sketch(&GeneratorConfig::default(), &mut RandomSource::new(seed)).unwrap()
}

fn random_probs(rng: &mut ChaCha8Rng) -> TokenProbabilities {
    let mut data = vec![0.0f32; 128 * 73];
    for row in data.chunks_exact_mut(73) {
        row.iter_mut().for_each(|v| *v = rng.random_range(0.01..1.0));
        let s: f32 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    TokenProbabilities::new(data).unwrap()
}

#[test]
fn config_validation() {
    assert!(TransformerConfig::desk().validate(64).is_ok());
    assert!(TransformerConfig::full_spn().validate(128).is_ok());
    assert!(TransformerConfig::desk().validate(60).is_err());
    let mut bad = TransformerConfig::desk();
    bad.heads = 3;
    assert!(matches!(bad.validate(64), Err(NetsError::InvalidConfig(_))));
    assert_eq!(TransformerConfig::full_srn().layers, 12);
}

#[test]
fn srn_shapes_and_range() {
    let srn = tiny_srn();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let imgs = srn.render(&[random_probs(&mut rng), TokenProbabilities::uniform()]).unwrap();
    assert_eq!(imgs.len(), 2);
    for img in &imgs {
        assert_eq!((img.width, img.height), (32, 32));
        assert!(img.pixels.iter().all(|&p| p > 0.0 && p < 1.0));
    }
}

#[test]
fn srn_one_hot_equals_probability_input() {
    let srn = tiny_srn();
    let (g, _) = sample(1);
    let one_hot = TokenProbabilities::one_hot(&g);
    let same = TokenProbabilities::new(one_hot.data().to_vec()).unwrap();
    assert_eq!(srn.render(&[one_hot]).unwrap(), srn.render(&[same]).unwrap());
}

#[test]
fn srn_embedding_is_linear_in_rows() {
    let srn = tiny_srn();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (p, q) = (random_probs(&mut rng), random_probs(&mut rng));
    let alpha = 0.3f32;
    let mix: Vec<f32> = p.data().iter().zip(q.data()).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
    let embed = |x: &TokenProbabilities| {
        let mut t = Tape::new();
        let rows = t.constant(x.to_tensor());
        let table = t.constant(srn.params.value("srn.embed").unwrap().clone());
        let e = t.embed(rows, table).unwrap();
        t.value(e).data().to_vec()
    };
    let (ep, eq, em) = (embed(&p), embed(&q), embed(&TokenProbabilities::new(mix).unwrap()));
    for i in 0..em.len() {
        assert!((em[i] - (alpha * ep[i] + (1.0 - alpha) * eq[i])).abs() < 1e-5);
    }
}

#[test]
fn srn_rejects_bad_token_shape() {
    let srn = tiny_srn();
    let mut t = Tape::new();
    let x = t.constant(crate::autodiff::Tensor::zeros(&[1, 100, 73]));
    assert!(matches!(srn.forward(&mut t, x, false), Err(NetsError::ShapeMismatch { .. })));
}

#[test]
fn spn_rows_on_simplex_and_deterministic() {
    let spn = tiny_spn();
    let (_, s) = sample(5);
    let img = rasterize(&s, 32, 32);
    let a = spn.predict(&[img.clone(), img.clone()]).unwrap();
    assert_eq!(a[0], a[1]);
    for r in 0..128 {
        assert!((a[0].row(r).iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }
    assert!(spn.predict(&[crate::raster::SketchImage::zeros(16, 16)]).is_err());
}

#[test]
fn frozen_renderer_passes_token_gradients_only() {
    let srn = tiny_srn();
    let (g, s) = sample(6);
    let target = rasterize(&s, 32, 32);
    let mut t = Tape::new();
    let x = t.leaf(batch_probs(&[TokenProbabilities::one_hot(&g)]), true);
    let y = srn.forward(&mut t, x, false).unwrap();
    let tgt = t.constant(batch_images(&[target], 32).unwrap());
    let loss = multiscale_l2(&mut t, y, tgt).unwrap();
    t.backward(loss).unwrap();
    assert!(t.grad(x).unwrap().iter().any(|&v| v != 0.0));
    let mut store = srn.params.clone();
    let before = store.content_hash();
    store.accumulate(&t).unwrap();
    assert!(store.names().all(|n| store.grad(n).is_none()));
    assert_eq!(store.content_hash(), before);
}

#[test]
fn composite_render_loss_gradient() {
    let srn = SrnModel::new(SrnConfig::desk(), 1).unwrap();
    let (_, s) = sample(7);
    let target = batch_images(&[rasterize(&s, 64, 64)], 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let y = batch_probs(&[random_probs(&mut rng)]);
    let report = grad_check(
        |t, v| {
            let img = srn.forward(t, v[0], false).map_err(unwrap_ad)?;
            let tg = t.constant(target.clone());
            multiscale_l2(t, img, tg).map_err(unwrap_ad)
        },
        &[y],
        GRAD_CHECK_EPS,
        Some(64),
    )
    .unwrap();
    assert!(report.passed(GRAD_CHECK_TOL), "{} at {:?}", report.max_rel_err, report.worst);
}

fn unwrap_ad(e: NetsError) -> crate::autodiff::AutodiffError {
    match e {
        NetsError::Autodiff(a) => a,
        other => panic!("{other}"),
    }
}

#[test]
fn spn_gradients_reach_every_parameter() {
    let spn = tiny_spn();
    let (g, s) = sample(8);
    let mut t = Tape::new();
    let x = t.constant(batch_images(&[rasterize(&s, 32, 32)], 32).unwrap());
    let p = spn.forward(&mut t, x, true).unwrap();
    let loss = token_cross_entropy(&mut t, p, &[g], &[Assignment::identity(16)]).unwrap();
    t.backward(loss).unwrap();
    let mut store = spn.params.clone();
    store.accumulate(&t).unwrap();
    for name in spn.params.names() {
        let grad = store.grad(name).unwrap();
        assert!(grad.iter().any(|&v| v != 0.0), "{name} received no gradient");
    }
}

fn scalar(f: impl FnOnce(&mut Tape) -> Var) -> f64 {
    let mut t = Tape::new();
    let v = f(&mut t);
    t.scalar_f64(v)
}

use crate::autodiff::Var;

fn image_var(t: &mut Tape, imgs: &[crate::raster::SketchImage]) -> Var {
    let n = imgs[0].width;
    t.constant(batch_images(imgs, n).unwrap())
}

#[test]
fn multiscale_constant_images() {
    for n in [16, 32, 64] {
        let (z, o) = (crate::raster::SketchImage::zeros(n, n), crate::raster::SketchImage::filled(n, n, 1.0));
        let v = scalar(|t| {
            let (a, b) = (image_var(t, std::slice::from_ref(&z)), image_var(t, std::slice::from_ref(&o)));
            multiscale_l2(t, a, b).unwrap()
        });
        assert_eq!(v, 5.0);
        assert_eq!(multiscale_l2_images(&z, &o).unwrap(), 5.0);
        assert_eq!(multiscale_l2_images(&o, &o).unwrap(), 0.0);
    }
}

#[test]
fn multiscale_matches_off_tape_and_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let a = crate::raster::SketchImage::from_pixels(32, 32, (0..1024).map(|_| rng.random()).collect());
        let b = crate::raster::SketchImage::from_pixels(32, 32, (0..1024).map(|_| rng.random()).collect());
        let on = |x: &crate::raster::SketchImage, y: &crate::raster::SketchImage| {
            scalar(|t| {
                let (p, q) = (image_var(t, std::slice::from_ref(x)), image_var(t, std::slice::from_ref(y)));
                multiscale_l2(t, p, q).unwrap()
            })
        };
        let off = multiscale_l2_images(&a, &b).unwrap();
        assert!((on(&a, &b) - off).abs() < 1e-6);
        assert_eq!(on(&a, &b), on(&b, &a));
        let l2 = scalar(|t| {
            let (p, q) = (image_var(t, std::slice::from_ref(&a)), image_var(t, std::slice::from_ref(&b)));
            image_loss(t, ImageLossKind::L2, p, q).unwrap()
        });
        assert!(off >= l2);
    }
}

#[test]
fn bce_of_perfect_prediction() {
    let (_, s) = sample(10);
    let img = rasterize(&s, 32, 32);
    let v = scalar(|t| {
        let (p, q) = (image_var(t, std::slice::from_ref(&img)), image_var(t, std::slice::from_ref(&img)));
        image_loss(t, ImageLossKind::Bce, p, q).unwrap()
    });
    assert!(v < 1e-5, "{v}");
}

#[test]
fn token_cross_entropy_cases() {
    let (g, _) = sample(11);
    let id = Assignment::identity(16);
    let ce = |p: &TokenProbabilities, g: &TokenGrid, a: &Assignment| {
        scalar(|t| {
            let v = t.constant(batch_probs(std::slice::from_ref(p)));
            token_cross_entropy(t, v, &[*g], std::slice::from_ref(a)).unwrap()
        })
    };
    assert!(ce(&TokenProbabilities::one_hot(&g), &g, &id) < 1e-9);
    let u = ce(&TokenProbabilities::uniform(), &g, &id);
    assert!((u - 73f64.ln()).abs() < 1e-6, "{u}");
    assert!((73f64.ln() - 4.2905).abs() < 1e-4);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = random_probs(&mut rng);
    let perm: Vec<usize> = (0..16).map(|i| (i * 7 + 2) % 16).collect();
    let moved = g.permute_slots(&perm);
    // Target slot i of `moved` is slot perm[i] of `g`, which the identity scores against prediction slot perm[i].
    let a = Assignment::from_perm(perm).unwrap();
    assert_eq!(ce(&p, &moved, &a), ce(&p, &g, &id));

    let mut t = Tape::new();
    let v = t.constant(batch_probs(&[p]));
    let bad = Assignment { perm: vec![0; 16], cost: 0.0 };
    assert!(matches!(token_cross_entropy(&mut t, v, &[g], &[bad]), Err(NetsError::InvalidPermutation)));
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("srn.pcso");
    let srn = tiny_srn();
    srn.save(&path).unwrap();
    let loaded = SrnModel::load(&path, srn.config.clone()).unwrap();
    assert_eq!(loaded.params.content_hash(), srn.params.content_hash());
    assert_eq!(encode_checkpoint(&loaded.params), std::fs::read(&path).unwrap());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    assert!(matches!(decode_checkpoint(&bytes), Err(NetsError::BadMagic)));
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[4] = 9;
    assert!(matches!(decode_checkpoint(&bytes), Err(NetsError::VersionMismatch { found: 9, .. })));
    let bytes = std::fs::read(&path).unwrap();
    assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3]), Err(NetsError::Truncated(_))));

    let mut other = srn.config.clone();
    other.transformer.d_ff = 48;
    match SrnModel::load(&path, other) {
        Err(NetsError::ParameterShape { name, .. }) => assert_eq!(name, "srn.enc.0.ff.fc1.w"),
        r => panic!("expected ParameterShape, got {r:?}"),
    }
    let mut deeper = srn.config.clone();
    deeper.transformer.layers = 2;
    assert!(matches!(SrnModel::load(&path, deeper), Err(NetsError::MissingParameter(_))));
    assert!(SpnModel::load(&path, tiny_spn().config).is_err());
}

#[test]
fn init_is_seeded() {
    let cfg = SrnConfig { transformer: tiny_transformer(), image_size: 32 };
    let a = SrnModel::new(cfg.clone(), 5).unwrap();
    let b = SrnModel::new(cfg.clone(), 5).unwrap();
    let c = SrnModel::new(cfg, 6).unwrap();
    assert_eq!(a.params.content_hash(), b.params.content_hash());
    assert_ne!(a.params.content_hash(), c.params.content_hash());
}

