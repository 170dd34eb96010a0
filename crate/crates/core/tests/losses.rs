mod common;

use adrmx_core::data::CompositeBatch;
use adrmx_core::losses::{discriminator_loss, generator_loss, remix_loss, supcon_loss, LossBreakdown};
use adrmx_core::model::{remix, AdrmxConfig, AdrmxParams, ModelOptions, ParamGroup, Trainable};
use adrmx_core::{Error, ParamStore, Tape, Tensor};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn supcon_value(z: &Tensor, labels: &[usize], tau: f64) -> adrmx_core::Result<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(z.clone());
    let l = supcon_loss(&mut tape, v, labels, tau)?;
    Ok(tape.value(l).item())
}

fn ce_value(logits: &Tensor, targets: &[usize]) -> adrmx_core::Result<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(logits.clone());
    let l = discriminator_loss(&mut tape, v, targets)?;
    Ok(tape.value(l).item())
}

#[test]
fn supcon_trivial_cases() {
    let z = Tensor::from_rows(&[vec![0.6, 0.8], vec![0.6, 0.8]]).unwrap();
    for tau in [1.0, 0.1] {
        assert_eq!(supcon_value(&z, &[3, 3], tau).unwrap(), 0.0);
    }
    let z = normalize_rows(&random_matrix(&mut rng(0), 4, 3, 1.0));
    assert_eq!(supcon_value(&z, &[0, 1, 2, 3], 1.0).unwrap(), 0.0);
}

#[test]
fn supcon_all_equal_rows_with_shared_label() {
    // every contrast equals every positive, so each anchor scores ln(B - 1);
    // the value is 0 only for B = 2
    let row = normalize_rows(&Tensor::matrix(1, 4, vec![1.0, -2.0, 0.5, 3.0]).unwrap());
    for b in [2usize, 6] {
        let z = Tensor::vstack(&vec![&row; b]).unwrap();
        let got = supcon_value(&z, &vec![1; b], 0.5).unwrap();
        assert!((got - ((b - 1) as f64).ln()).abs() < 1e-12, "{b}: {got}");
        assert!(rel_diff(got, supcon_oracle(&z, &vec![1; b], 0.5)) < 1e-12 || got.abs() < 1e-15);
    }
}

#[test]
fn supcon_matches_triple_loop_oracle() {
    let mut r = rng(1);
    for tau in [1.0, 0.3] {
        let z = normalize_rows(&random_matrix(&mut r, 5, 4, 1.0));
        let labels = [0, 1, 0, 2, 1];
        let got = supcon_value(&z, &labels, tau).unwrap();
        assert!(rel_diff(got, supcon_oracle(&z, &labels, tau)) < 1e-12);
    }
}

#[test]
fn supcon_rejects_unnormalized_rows() {
    let z = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.1]]).unwrap();
    assert!(matches!(supcon_value(&z, &[0, 0], 1.0), Err(Error::Contract(_))));
}

proptest! {
    #[test]
    fn supcon_is_permutation_equivariant(seed in any::<u64>(), b in 2usize..9) {
        let mut r = rng(seed);
        let z = normalize_rows(&random_matrix(&mut r, b, 3, 1.0));
        let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..3)).collect();
        let mut perm: Vec<usize> = (0..b).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
        let zp = z.select_rows(&perm).unwrap();
        let lp: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let a = supcon_value(&z, &labels, 0.7).unwrap();
        let c = supcon_value(&zp, &lp, 0.7).unwrap();
        prop_assert!(rel_diff(a, c) < 1e-12);
    }

    #[test]
    fn raising_target_logit_lowers_ce(seed in any::<u64>(), bump in 0.01f64..5.0) {
        let mut r = rng(seed);
        let logits = random_matrix(&mut r, 1, 4, 3.0);
        let t = r.random_range(0..4);
        let mut up = logits.clone();
        up.data_mut()[t] += bump;
        prop_assert!(ce_value(&up, &[t]).unwrap() < ce_value(&logits, &[t]).unwrap());
    }
}

#[test]
fn ce_is_finite_for_extreme_logits() {
    let logits = Tensor::from_rows(&[vec![1e4, -1e4, 0.0], vec![-800.0, 800.0, 1.0]]).unwrap();
    let v = ce_value(&logits, &[1, 0]).unwrap();
    assert!(v.is_finite() && v > 0.0);
}

#[test]
fn remix_loss_cases() {
    let mut tape = Tape::new();
    assert!(remix_loss(&mut tape, None, &[]).unwrap().is_none());
    let uniform = tape.constant(Tensor::zeros(&[3, 7]));
    let l = remix_loss(&mut tape, Some(uniform), &[0, 4, 6]).unwrap().unwrap();
    assert!((tape.value(l).item() - 7f64.ln()).abs() < 1e-15);
}

#[test]
fn self_remix_loss_equals_label_ce() {
    let cfg = AdrmxConfig::with_options(
        4,
        3,
        2,
        ModelOptions {
            latent_dim: 5,
            encoder_hidden: vec![7],
            ..ModelOptions::default()
        },
    );
    let p = AdrmxParams::new(cfg, 3).unwrap();
    let x = random_matrix(&mut rng(4), 6, 4, 1.0);
    let labels = [0, 1, 2, 0, 1, 2];
    let (xl, xd) = p.encode_inference(&x).unwrap();
    let mut tape = Tape::new();
    let (vl, vd) = (tape.constant(xl.clone()), tape.constant(xd));
    let dinv = tape.sub(vl, vd).unwrap();
    let pairs: Vec<(usize, usize)> = (0..6).map(|i| (i, i)).collect();
    let xr = remix(&mut tape, dinv, vd, &pairs).unwrap().unwrap();
    let w = p.group_ids(ParamGroup::LabelClassifier);
    let (wv, bv) = (
        tape.constant(p.store().value(w[0]).clone()),
        tape.constant(p.store().value(w[1]).clone()),
    );
    let head = |tape: &mut Tape, z| {
        let m = tape.matmul(z, wv).unwrap();
        tape.add_bias(m, bv).unwrap()
    };
    let lr = head(&mut tape, xr);
    let ll = head(&mut tape, vl);
    let remix_l = remix_loss(&mut tape, Some(lr), &labels).unwrap().unwrap();
    let label_l = tape.softmax_cross_entropy(ll, &labels).unwrap();
    assert!(rel_diff(tape.value(remix_l).item(), tape.value(label_l).item()) < 1e-10);
}

#[test]
fn discriminator_loss_cases() {
    let uniform = Tensor::zeros(&[5, 3]);
    assert!((ce_value(&uniform, &[0, 1, 2, 0, 1]).unwrap() - 3f64.ln()).abs() < 1e-15);
    let mut confident = Tensor::zeros(&[3, 3]);
    for (r, t) in [2usize, 0, 1].iter().enumerate() {
        confident.data_mut()[r * 3 + t] = 20.0;
    }
    assert!(ce_value(&confident, &[2, 0, 1]).unwrap() < 1e-8);
    assert!(matches!(ce_value(&uniform, &[0, 1, 3, 0, 0]), Err(Error::Index { .. })));
    let mut r = rng(5);
    for _ in 0..20 {
        let logits = random_matrix(&mut r, 6, 3, 4.0);
        let t: Vec<usize> = (0..6).map(|_| r.random_range(0..3)).collect();
        assert!(rel_diff(ce_value(&logits, &t).unwrap(), ce_oracle(&logits, &t)) < 1e-12);
    }
}

fn gen_setup(lambda: f64, remix: bool, contrastive: bool) -> (AdrmxParams, CompositeBatch) {
    let cfg = AdrmxConfig::with_options(
        4,
        2,
        3,
        ModelOptions {
            latent_dim: 5,
            encoder_hidden: vec![6],
            discriminator_hidden: vec![6],
            lambda,
            use_remix: remix,
            use_contrastive: contrastive,
            ..ModelOptions::default()
        },
    );
    let p = AdrmxParams::new(cfg, 6).unwrap();
    let b = CompositeBatch {
        inputs: random_matrix(&mut rng(7), 9, 4, 1.0),
        labels: (0..9).map(|i| i % 2).collect(),
        domains: (0..9).map(|i| i / 3).collect(),
    };
    (p, b)
}

#[test]
fn breakdown_recomposes_and_gates() {
    for (lambda, remix, contrastive) in [(0.7, true, true), (0.0, false, false), (2.0, true, false)] {
        let (p, b) = gen_setup(lambda, remix, contrastive);
        let mut tape = Tape::new();
        let art = p
            .forward_train(&mut tape, &b, &mut rng(1), Trainable::GENERATOR)
            .unwrap();
        let g = generator_loss(&mut tape, &art, p.config()).unwrap();
        let bd: LossBreakdown = g.breakdown;
        assert!((bd.recompose(lambda, p.config().opts.ce_weights) - bd.gen_total).abs() <= 1e-12);
        if !remix {
            assert_eq!(bd.remix, 0.0);
        }
        if !contrastive {
            assert_eq!(bd.contrastive, 0.0);
        }
        if lambda == 0.0 && !remix && !contrastive {
            assert!((bd.gen_total - (bd.ce_label + bd.ce_domain + bd.ce_dinv)).abs() <= 1e-12);
        }
    }
}

#[test]
fn adversarial_gradient_reaches_only_encoders() {
    let lambda = 0.8;
    let (p, b) = gen_setup(lambda, false, false);
    // gradient of -λ·L_disc alone, discriminator frozen as in the generator step
    let mut tape = Tape::new();
    let art = p
        .forward_train(&mut tape, &b, &mut rng(0), Trainable::GENERATOR)
        .unwrap();
    let disc = discriminator_loss(&mut tape, art.logits_disc, &art.domains).unwrap();
    let neg = tape.scale(disc, -lambda).unwrap();
    let grads = tape.backward(neg).unwrap();
    for id in p.discriminator_ids() {
        assert!(grads.param(id).is_none());
    }
    for g in [ParamGroup::LabelClassifier, ParamGroup::DomainClassifier] {
        for id in p.group_ids(g) {
            assert!(grads.param(id).is_none());
        }
    }
    let disc_value = |store: &ParamStore| {
        let mut q = p.clone();
        *q.store_mut() = store.clone();
        let x = q.dinv_inference(&b.inputs).unwrap();
        let mut t = Tape::new();
        let xv = t.constant(x);
        let logits = q.discriminate(&mut t, xv, false).unwrap();
        let l = discriminator_loss(&mut t, logits, &b.domains).unwrap();
        -lambda * t.value(l).item()
    };
    for g in [ParamGroup::LabelEncoder, ParamGroup::DomainEncoder] {
        for id in p.group_ids(g) {
            let numeric = central_diff(p.store(), id, disc_value);
            let analytic = grads.param(id).unwrap_or_else(|| Tensor::zeros(numeric.shape()));
            assert!(max_rel_error(&analytic, &numeric) < 1e-4, "{}", p.store().name(id));
        }
    }
}

#[test]
fn non_finite_part_is_reported_by_name() {
    let parts = LossBreakdown {
        contrastive: f64::INFINITY,
        ..LossBreakdown::default()
    };
    match adrmx_core::losses::generator_total(&parts, 1.0, Default::default()) {
        Err(Error::Divergence(m)) => assert!(m.contains("contrastive")),
        other => panic!("{other:?}"),
    }
    assert!(parts.check_finite().is_err());
}
