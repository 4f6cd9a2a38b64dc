use koopman_hjb_cli::config::{
    BasisConfig, DampingConfig, DomainConfig, InitConfig, OutputConfig, QuadratureConfig, RunConfig,
    SolverSection, SystemConfig, TermConfig, ValidateConfig, WeightConfig, WeightKindConfig,
};
use proptest::prelude::*;

fn finite() -> std::ops::Range<f64> {
    -1e6f64..1e6
}

fn system(d: usize) -> impl Strategy<Value = SystemConfig> {
    let term = (proptest::collection::vec(0u32..4, d), finite())
        .prop_map(|(exponents, coeff)| TermConfig { exponents, coeff });
    let terms = proptest::collection::vec(term, 0..3);
    let field = move |n: usize| proptest::collection::vec(terms.clone(), n);
    let row = proptest::collection::vec(finite(), d);
    prop_oneof![
        (finite(), finite(), finite(), finite())
            .prop_map(|(mu, eta, alpha, gamma)| SystemConfig::Vanderpol { mu, eta, alpha, gamma }),
        (
            proptest::collection::vec(row.clone(), d),
            proptest::collection::vec(finite(), d),
            proptest::collection::vec(row, 1..3)
        )
            .prop_map(|(a, b, c)| SystemConfig::Linear { a, b, c }),
        (field(d), field(d), field(2)).prop_map(|(f, b, c)| SystemConfig::Polynomial { f, b, c }),
    ]
}

fn run_config() -> impl Strategy<Value = RunConfig> {
    (1usize..=2).prop_flat_map(|d| {
        (
            proptest::collection::vec(-10.0f64..-0.1, d),
            proptest::collection::vec(0.1f64..10.0, d),
            system(d),
            (2usize..40, 1usize..8, proptest::option::of(1usize..20), any::<bool>()),
            (1e-14f64..1e-2, 1usize..100, any::<bool>(), any::<bool>(), 0.0f64..1e-6),
            (0usize..20, 0.1f64..100.0, 1e-12f64..1e-3, 1usize..50, any::<bool>()),
            ("[a-z]{1,8}", any::<bool>(), 2usize..100),
        )
            .prop_map(|(lower, upper, system, basis, solver, validate, output)| RunConfig {
                domain: DomainConfig { lower: lower.clone(), upper: upper.clone() },
                weight: WeightConfig {
                    kind: if basis.3 { WeightKindConfig::InverseNorm } else { WeightKindConfig::Constant },
                    floor: 0.0,
                },
                basis: BasisConfig { n_grid: basis.0, degree: basis.1, vanish_at_origin: basis.3 },
                quadrature: QuadratureConfig { order: basis.2 },
                system,
                solver: SolverSection {
                    tol: solver.0,
                    max_iter: solver.1,
                    init: if solver.2 { InitConfig::LqrLift } else { InitConfig::Zero },
                    damping: if solver.3 { DampingConfig::Backtracking } else { DampingConfig::Off },
                    sigma_clip: solver.4,
                },
                validate: ValidateConfig {
                    n_trajectories: validate.0,
                    t_final: validate.1,
                    rtol: validate.2,
                    hjb_sample_grid: validate.3,
                    hjb_box: validate.4.then(|| DomainConfig { lower, upper }),
                    ..ValidateConfig::default()
                },
                output: OutputConfig { directory: output.0.into(), emit_svg: output.1, value_grid: output.2 },
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn emitted_config_parses_back_equal(cfg in run_config()) {
        let text = cfg.to_toml();
        let back: RunConfig = toml::from_str(&text).expect("re-parses");
        prop_assert_eq!(back, cfg);
    }
}
