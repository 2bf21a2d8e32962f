mod common;

use common::{arch_of, bounded_input, forward_oracle, random_budget};
use proptest::prelude::*;
use transformer_bounds::matrix_kit::{Mat, RngStream};
use transformer_bounds::transformer::{
    forward, multi_layer_states, output_bound, project_params, Activation, ArchKind, ArchSpec, BudgetMode, ParamBudget,
    TransformerParams,
};

fn random_instance(kind: ArchKind, seed: u64) -> (ArchSpec, TransformerParams, Mat) {
    let spec = arch_of(kind);
    let mut rng = RngStream::new(seed, 0).rng();
    let params = TransformerParams::sample(&spec, 0.8, &mut rng).unwrap();
    let x = bounded_input(&mut rng, spec.seq_len, spec.embed_dim, 2.0);
    (spec, params, x)
}

#[test]
fn single_head_matches_decomposed_oracle() {
    for seed in 0..20 {
        let (spec, params, x) = random_instance(ArchKind::SingleHead, seed);
        let got = forward(&params, &x, &spec).unwrap();
        let want = forward_oracle(&params, &x, &spec);
        assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn multi_head_matches_decomposed_oracle() {
    for seed in 0..20 {
        let (spec, params, x) = random_instance(ArchKind::MultiHead, seed);
        let got = forward(&params, &x, &spec).unwrap();
        let want = forward_oracle(&params, &x, &spec);
        assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn multi_layer_matches_decomposed_oracle() {
    for seed in 0..20 {
        let (spec, params, x) = random_instance(ArchKind::MultiLayer, seed);
        let got = forward(&params, &x, &spec).unwrap();
        let want = forward_oracle(&params, &x, &spec);
        assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn oracle_agrees_for_other_activations() {
    for act in [Activation::Tanh, Activation::Identity] {
        for kind in [ArchKind::SingleHead, ArchKind::MultiLayer] {
            let (spec, params, x) = random_instance(kind, 99);
            let spec = spec.with_activation(act);
            let got = forward(&params, &x, &spec).unwrap();
            let want = forward_oracle(&params, &x, &spec);
            assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0));
        }
    }
}

#[test]
fn hand_computed_single_head() {
    let spec = ArchSpec::single_head(2, 1, 1);
    let mut p = TransformerParams::zeros(&spec);
    p.blocks[0][0].w_v = Mat::from_rows(&[vec![1.0]]).unwrap();
    p.blocks[0][0].w_c = Mat::from_rows(&[vec![1.0]]).unwrap();
    p.readout = vec![1.0];
    let x = Mat::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
    assert!((forward(&p, &x, &spec).unwrap() - 2.0).abs() < 1e-15);
}

fn check_output_bound(kind: ArchKind, seed: u64) -> (f64, f64) {
    let mut rng = RngStream::new(seed, 7).rng();
    let mut spec = arch_of(kind);
    if kind == ArchKind::MultiHead {
        spec.heads = 1 + (seed % 4) as usize;
    }
    let budget = ParamBudget {
        mode: BudgetMode::Spectral,
        l_sigma: 1.0,
        ..random_budget(&mut rng, 0.2, 2.5)
    };
    let raw = TransformerParams::sample(&spec, 3.0, &mut rng).unwrap();
    let params = project_params(&raw, &budget, &spec).unwrap();
    let x = bounded_input(&mut rng, spec.seq_len, spec.embed_dim, budget.b_input);
    (forward(&params, &x, &spec).unwrap().abs(), output_bound(&spec, &budget))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn outputs_respect_magnitude_bounds(seed in any::<u64>(), k in 0usize..3) {
        let kind = [ArchKind::SingleHead, ArchKind::MultiHead, ArchKind::MultiLayer][k];
        let (value, cap) = check_output_bound(kind, seed);
        prop_assert!(value <= cap * (1.0 + 1e-12), "{value} > {cap}");
    }

    #[test]
    fn multi_layer_rows_stay_in_unit_ball(seed in any::<u64>()) {
        let spec = ArchSpec::multi_layer(4, 3, 3);
        let mut rng = RngStream::new(seed, 1).rng();
        let params = TransformerParams::sample(&spec, 2.0, &mut rng).unwrap();
        let x = bounded_input(&mut rng, 4, 3, 5.0);
        for state in multi_layer_states(&params, &x, &spec).unwrap() {
            for i in 0..state.rows() {
                let n = state.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!(n <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn one_head_equals_single_head(seed in any::<u64>()) {
        let sh = ArchSpec::single_head(3, 2, 2);
        let mh = ArchSpec::multi_head(3, 2, 2, 1);
        let mut rng = RngStream::new(seed, 2).rng();
        let params = TransformerParams::sample(&sh, 1.0, &mut rng).unwrap();
        let x = bounded_input(&mut rng, 3, 2, 1.0);
        let a = forward(&params, &x, &sh).unwrap();
        let b = forward(&params, &x, &mh).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }
}
