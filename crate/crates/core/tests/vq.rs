use bipo_core::motion::corpus::{generate_corpus, CorpusConfig};
use bipo_core::motion::parts::{split_part, Part, PartMotion};
use bipo_core::vq::{codebook_stats, quantize, raw_reconstruction_mse, train_part, PartVq, VqConfig};
use bipo_tensor::{Grads, Rng, Tape, Tensor};
use proptest::prelude::*;

fn small() -> VqConfig {
    VqConfig {
        width: 12,
        codebook_size: 10,
        code_dim: 5,
        root_code_dim: 3,
        ..Default::default()
    }
}

fn one_template(name: &str, part: Part) -> Vec<PartMotion> {
    let config = CorpusConfig {
        n_sequences: 100,
        templates: vec![name.to_string()],
        ..Default::default()
    };
    let corpus = generate_corpus(3, &config).unwrap();
    corpus.pairs.iter().map(|p| split_part(&p.motion, part)).collect()
}

fn random_motion(part: Part, frames: usize, rng: &mut Rng) -> PartMotion {
    let data = (0..frames * part.dim()).map(|_| rng.normal()).collect();
    PartMotion::new(part, frames, data).unwrap()
}

#[test]
fn overfit_one_template_in_200_steps() {
    let data = one_template("walk_forward", Part::RightLeg);
    let config = VqConfig {
        steps: 200,
        eval_every: 50,
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let (vq, report, _) = train_part(Part::RightLeg, &data, &[], &config, 1).unwrap();
    let mse = raw_reconstruction_mse(&vq, &data).unwrap();
    assert!(mse < 1e-2, "per-element mse {mse}");
    assert!(start.elapsed().as_secs() < 120);
    assert_eq!(report.usage.total, data.iter().map(|m| m.len().div_ceil(4)).sum::<usize>());
}

#[test]
fn doubling_length_doubles_latents() {
    let mut rng = Rng::new(4);
    let vq = PartVq::new(Part::Backbone, &small(), &mut rng).unwrap();
    for frames in [4, 8, 20, 32] {
        let a = vq.encode(&random_motion(Part::Backbone, frames, &mut rng)).unwrap();
        let b = vq.encode(&random_motion(Part::Backbone, 2 * frames, &mut rng)).unwrap();
        assert_eq!(b.rows(), 2 * a.rows());
        assert_eq!(a.rows(), frames / 4);
    }
}

#[test]
fn straight_through_matches_identity_quantizer() {
    let mut rng = Rng::new(9);
    let vq = PartVq::new(Part::LeftArm, &small(), &mut rng).unwrap();
    let x = Tensor::randn(vec![2, 8, Part::LeftArm.dim()], 1.0, &mut rng);
    let d = vq.code_dim;

    // Route 1: straight-through estimator.
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let z = vq.encode_var(&tape, xv).unwrap();
    let zf = tape.reshape(z, &[4, d]).unwrap();
    let zval = tape.value(zf).clone();
    let q = quantize(&zval, vq.codebook_tensor()).unwrap();
    let st = tape.straight_through(zf, q.codes.clone()).unwrap();
    let st = tape.reshape(st, &[2, 2, d]).unwrap();
    let y = vq.decode_var(&tape, st).unwrap();
    let loss = tape.mse(y, xv).unwrap();
    let g1 = tape.backward(loss).unwrap();
    let dz = g1.wrt(zf).unwrap().to_vec();
    let mut enc1 = Grads::new(&vq.params);
    g1.accumulate_into(&mut enc1);

    // Route 2: decoder fed the codewords as a leaf, then quantizer as identity.
    let tape = Tape::new();
    let e = tape.leaf(q.codes.clone().reshape(vec![2, 2, d]).unwrap());
    let y = vq.decode_var(&tape, e).unwrap();
    let xv2 = tape.constant(x.clone());
    let loss2 = tape.mse(y, xv2).unwrap();
    let g2 = tape.backward(loss2).unwrap();
    let de = g2.wrt(e).unwrap();
    for (a, b) in dz.iter().zip(de) {
        assert!((a - b).abs() < 1e-12);
    }

    // Route 3: identity plus a constant offset landing on the codewords.
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let z = vq.encode_var(&tape, xv).unwrap();
    let zf = tape.reshape(z, &[4, d]).unwrap();
    let offset: Vec<f64> = q.codes.data().iter().zip(zval.data()).map(|(c, z)| c - z).collect();
    let off = tape.constant(Tensor::new(vec![4, d], offset).unwrap());
    let qz = tape.add(zf, off).unwrap();
    let qz = tape.reshape(qz, &[2, 2, d]).unwrap();
    let y = vq.decode_var(&tape, qz).unwrap();
    let loss3 = tape.mse(y, xv).unwrap();
    let g3 = tape.backward(loss3).unwrap();
    let mut enc3 = Grads::new(&vq.params);
    g3.accumulate_into(&mut enc3);
    for id in vq.params.ids() {
        let (a, b) = (enc1.get(id), enc3.get(id));
        assert_eq!(a.is_some(), b.is_some());
        if let (Some(a), Some(b)) = (a, b) {
            for (u, v) in a.iter().zip(b) {
                assert!((u - v).abs() <= 1e-10 * (1.0 + u.abs()), "{}", vq.params.name(id));
            }
        }
    }
}

#[test]
fn same_token_decodes_to_periodic_interior() {
    let vq = PartVq::new(Part::RightArm, &small(), &mut Rng::new(2)).unwrap();
    let m = vq.decode_tokens(&[3; 16]).unwrap();
    assert_eq!(m.len(), 64);
    // Frames far from both ends see the same receptive field up to a shift of r.
    for t in 20..40 {
        for (a, b) in m.frame(t).iter().zip(m.frame(t + 4)) {
            assert!((a - b).abs() < 1e-9);
        }
    }
    assert!(vq.decode_tokens(&[10]).is_err());
}

#[test]
fn usage_sums_to_latent_count() {
    let mut rng = Rng::new(6);
    let vq = PartVq::new(Part::Root, &small(), &mut rng).unwrap();
    let mut tokens = Vec::new();
    let mut latents = 0;
    for frames in [8, 12, 30] {
        let m = random_motion(Part::Root, frames, &mut rng);
        latents += vq.encode(&m).unwrap().rows();
        tokens.extend(vq.tokenize(&m).unwrap());
    }
    assert_eq!(codebook_stats(&tokens, 10).counts.iter().sum::<usize>(), latents);
}

fn brute_force(z: &[f64], cb: &Tensor) -> usize {
    // Expanded form ‖e‖² − 2 e·z, independent of the direct difference scan.
    let mut best = (f64::INFINITY, 0);
    for k in 0..cb.rows() {
        let e = cb.row(k);
        let ee: f64 = e.iter().map(|v| v * v).sum();
        let ez: f64 = e.iter().zip(z).map(|(a, b)| a * b).sum();
        let score = ee - 2.0 * ez;
        if score < best.0 {
            best = (score, k);
        }
    }
    best.1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn assignment_matches_brute_force(seed in 0u64..10_000, n in 1usize..40, k in 1usize..20) {
        let mut rng = Rng::new(seed);
        let cb = Tensor::randn(vec![k, 4], 1.0, &mut rng);
        let z = Tensor::randn(vec![n, 4], 1.5, &mut rng);
        let q = quantize(&z, &cb).unwrap();
        for i in 0..n {
            prop_assert_eq!(q.tokens[i], brute_force(z.row(i), &cb));
            prop_assert_eq!(q.codes.row(i), cb.row(q.tokens[i]));
        }
        let again = quantize(&q.codes, &cb).unwrap();
        prop_assert_eq!(&again.tokens, &q.tokens);
        prop_assert_eq!(again.vq_loss, 0.0);
    }
}
