//! Finite-difference checks for every differentiable op and for an
//! end-to-end micro model.

use std::time::Instant;

use annopipe::autodiff::{Graph, NodeId};
use annopipe::encoder::{encode, EncoderConfig, EncoderWeights, PackedBatch};
use annopipe::gradcheck::{check_params, op_suite, GradCheckReport};
use annopipe::params::{BoundParams, ParamSet};
use annopipe::tokenize::EncodedSequence;
use annopipe::train::SoftmaxHead;
use annopipe::{Result, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-2;

fn micro_params<T: Scalar>() -> (EncoderConfig, ParamSet<T>, PackedBatch) {
    let config = EncoderConfig::custom(1, 8, 2, 20, 4).with_dropout(0.0);
    let mut params = EncoderWeights::<T>::init(config.clone(), 3).unwrap().into_params();
    // jitter every tensor so no parameter sits at its structured init value
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v = T::lit(v.to_f64().unwrap() + rng.random_range(-0.3..0.3));
        }
    }
    let mut head = SoftmaxHead::<T>::init(4, 8, true, 5).params();
    for (_, t) in head.iter_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v = T::lit(20.0 * v.to_f64().unwrap() + 0.1));
    }
    params.extend(head);
    let seqs = [
        EncodedSequence {
            ids: vec![2, 7, 11, 3],
            attention_mask: vec![1; 4],
            token_spans: vec![],
        },
        EncodedSequence {
            ids: vec![2, 15, 3, 0],
            attention_mask: vec![1, 1, 1, 0],
            token_spans: vec![],
        },
    ];
    let refs: Vec<&EncodedSequence> = seqs.iter().collect();
    let batch = PackedBatch::new(&refs, &config, false).unwrap();
    (config, params, batch)
}

fn micro_loss<T: Scalar>(
    g: &mut Graph<T>,
    bound: &BoundParams,
    config: &EncoderConfig,
    batch: &PackedBatch,
) -> Result<NodeId> {
    let nodes = encode(g, bound, config, batch, None)?;
    let logits = SoftmaxHead::logits(g, bound, nodes.pooled)?;
    g.softmax_cross_entropy(logits, &[1, 3])
}

fn micro_report<T: Scalar>() -> GradCheckReport<T> {
    let (config, params, batch) = micro_params::<T>();
    check_params(|g, b| micro_loss(g, b, &config, &batch), &params, T::lit(1e-2)).unwrap()
}

#[test]
fn every_op_f32_strict() {
    for case in op_suite::<f32>() {
        let r = annopipe::gradcheck::finite_difference_check_many(&case.f, &case.inputs, 1e-2).unwrap();
        assert!(
            f64::from(r.max_relative_error) < TOL,
            "{}: {} at {:?}",
            case.name,
            r.max_relative_error,
            r.worst
        );
        assert_eq!(r.max_relative_error_above_noise, 0.0, "{}", case.name);
    }
}

#[test]
fn every_op_f64_strict() {
    for case in op_suite::<f64>() {
        let r = annopipe::gradcheck::finite_difference_check_many(&case.f, &case.inputs, 1e-5).unwrap();
        assert!(r.max_relative_error < 1e-5, "{}: {}", case.name, r.max_relative_error);
    }
}

#[test]
fn micro_model_f32_above_noise_floor() {
    let started = Instant::now();
    let r = micro_report::<f32>();
    assert!(r.checked > 1000);
    assert!(
        f64::from(r.max_relative_error_above_noise) < TOL,
        "{} (strict {}, {} noise-limited)",
        r.max_relative_error_above_noise,
        r.max_relative_error,
        r.noise_limited
    );
    assert!(started.elapsed().as_secs() < 30);
}

#[test]
fn micro_model_f64_strict() {
    let r = micro_report::<f64>();
    assert!(r.max_relative_error < TOL, "{} at {:?}", r.max_relative_error, r.worst);
}

/// Independent central-difference oracle over the micro model, written
/// without the library checker.
#[test]
fn micro_model_matches_hand_rolled_differences_in_f64() {
    let (config, params, batch) = micro_params::<f64>();
    let mut g = Graph::<f64>::new();
    let bound = params.bind(&mut g, true);
    let loss = micro_loss(&mut g, &bound, &config, &batch).unwrap();
    g.backward(loss).unwrap();
    let analytic = bound.grads(&g);

    let eval = |p: &ParamSet<f64>| {
        let mut g = Graph::<f64>::new();
        let b = p.bind(&mut g, false);
        let l = micro_loss(&mut g, &b, &config, &batch).unwrap();
        g.value(l).data()[0]
    };
    let names: Vec<String> = params.names().map(String::from).collect();
    let mut work = params.clone();
    let mut worst_abs = 0.0f64;
    for name in &names {
        for j in (0..params.get(name).unwrap().numel()).step_by(7) {
            let x0 = params.get(name).unwrap().data()[j];
            let h = 1e-6;
            work.get_mut(name).unwrap().data_mut()[j] = x0 + h;
            let plus = eval(&work);
            work.get_mut(name).unwrap().data_mut()[j] = x0 - h;
            let minus = eval(&work);
            work.get_mut(name).unwrap().data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(name).unwrap().data()[j];
            worst_abs = worst_abs.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    assert!(worst_abs < 1e-6, "{worst_abs}");
}
