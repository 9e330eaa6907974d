//! Random configurations never panic: they either fail validation, fail in
//! compute with an error, or produce a record.

use lcft::geometry::{FourierTerm, HarmonicTerm};
use lcft::SurfaceKind;
use lcft_cli::config::*;
use lcft_cli::{run, RunError};
use proptest::prelude::*;

fn fourier(k: [i32; 2], a: f64) -> ScalarSpec {
    ScalarSpec::Fourier(vec![FourierTerm { k, a, b: 0.5 * a }])
}

/// A small valid config for each experiment.
fn base(experiment: ExperimentKind) -> ExperimentConfig {
    use ExperimentKind::*;
    let sphere = matches!(experiment, Mobius | WardN1);
    let kind = if sphere { SurfaceKind::Sphere } else { SurfaceKind::Torus };
    let mut cfg = ExperimentConfig {
        experiment,
        seed: 1,
        surface: SurfaceConfig { kind: Some(kind), resolution: Some(16), cutoff: Some(4), taper: Default::default() },
        physics: PhysicsConfig::default(),
        numerics: NumericsConfig::default(),
        output: OutputConfig::default(),
    };
    let p = &mut cfg.physics;
    p.gamma = Some(1.0);
    p.mu = Some(1.0);
    p.insertions = if sphere {
        vec![
            InsertionSpec { at: [0.6, 0.0], alpha: 1.8 },
            InsertionSpec { at: [-0.3, 0.52], alpha: 1.8 },
            InsertionSpec { at: [-0.3, -0.52], alpha: 1.8 },
        ]
    } else {
        vec![InsertionSpec { at: [0.5, 0.5], alpha: 0.5 }]
    };
    p.omega = Some(fourier([1, 0], 0.2));
    p.f = Some(TensorSpec { re: Some(fourier([1, 1], 0.05)), im: None, trace: None });
    p.points = match experiment {
        GreenVariation => vec![[0.2, 0.3], [0.6, 0.7]],
        WardN1 => vec![[0.1, 1.5]],
        _ => vec![],
    };
    p.pairs = vec![PairSpec { f: fourier([1, 0], 1.0), h: fourier([1, 0], 0.5) }];
    p.region = Some(RegionSpec { center: [0.5, 0.5], half: 0.25 });
    p.mobius = Some(MobiusSpec::Dilation { lambda: 1.5 });
    cfg.numerics.samples = Some(8);
    cfg.numerics.radius = Some(0.2);
    cfg.numerics.epsilons = vec![1e-2];
    cfg
}

#[derive(Debug, Clone)]
enum Mutation {
    Kind(Option<SurfaceKind>),
    Resolution(usize),
    Cutoff(usize),
    Gamma(Option<f64>),
    Mu(Option<f64>),
    Alpha(usize, f64),
    Insertion(usize, [f64; 2]),
    DropInsertions,
    Omega(Option<ScalarSpec>),
    F(Option<ScalarSpec>),
    Points(Vec<[f64; 2]>),
    Samples(Option<usize>),
    Radius(Option<f64>),
    Delta(Option<f64>),
    Deltas(Vec<f64>),
    Epsilons(Vec<f64>),
    Mobius(f64),
    Region(f64),
}

fn scalar() -> impl Strategy<Value = ScalarSpec> {
    prop_oneof![
        (-2.0..2.0f64).prop_map(ScalarSpec::Constant),
        (-3..3i32, -3..3i32, -1.0..1.0f64).prop_map(|(a, b, c)| fourier([a, b], c)),
        (0..4usize, -1.0..1.0f64).prop_map(|(l, c)| ScalarSpec::Harmonics(vec![HarmonicTerm { l, m: 0, c }])),
        (0.0..1.0f64, 0.0..1.0f64, -0.1..0.7f64)
            .prop_map(|(x, y, r)| ScalarSpec::Bump { center: [x, y], radius: r, amplitude: 1.0 }),
    ]
}

fn point() -> impl Strategy<Value = [f64; 2]> {
    (-1.5..1.5f64, -1.5..1.5f64).prop_map(|(x, y)| [x, y])
}

fn mutation() -> impl Strategy<Value = Mutation> {
    prop_oneof![
        prop::option::of(prop::sample::select(vec![SurfaceKind::Sphere, SurfaceKind::Torus])).prop_map(Mutation::Kind),
        prop::sample::select(vec![0usize, 8, 16, 17, 32, 2048]).prop_map(Mutation::Resolution),
        (0..20usize).prop_map(Mutation::Cutoff),
        prop::option::of(-0.5..2.5f64).prop_map(Mutation::Gamma),
        prop::option::of(-1.0..2.0f64).prop_map(Mutation::Mu),
        (0..4usize, -1.0..6.0f64).prop_map(|(i, a)| Mutation::Alpha(i, a)),
        (0..4usize, point()).prop_map(|(i, z)| Mutation::Insertion(i, z)),
        Just(Mutation::DropInsertions),
        prop::option::of(scalar()).prop_map(Mutation::Omega),
        prop::option::of(scalar()).prop_map(Mutation::F),
        prop::collection::vec(point(), 0..3).prop_map(Mutation::Points),
        prop::option::of(0..20usize).prop_map(Mutation::Samples),
        prop::option::of(-0.1..1.2f64).prop_map(Mutation::Radius),
        prop::option::of(-0.1..0.6f64).prop_map(Mutation::Delta),
        prop::collection::vec(-0.1..0.6f64, 0..3).prop_map(Mutation::Deltas),
        prop::collection::vec(-0.1..0.6f64, 0..3).prop_map(Mutation::Epsilons),
        (-1.0..4.0f64).prop_map(Mutation::Mobius),
        (-0.1..0.6f64).prop_map(Mutation::Region),
    ]
}

fn apply(cfg: &mut ExperimentConfig, m: Mutation) {
    let p = &mut cfg.physics;
    match m {
        Mutation::Kind(k) => cfg.surface.kind = k,
        Mutation::Resolution(n) => cfg.surface.resolution = Some(n),
        Mutation::Cutoff(n) => cfg.surface.cutoff = Some(n),
        Mutation::Gamma(g) => p.gamma = g,
        Mutation::Mu(m) => p.mu = m,
        Mutation::Alpha(i, a) => {
            if let Some(ins) = p.insertions.get_mut(i) {
                ins.alpha = a;
            }
        }
        Mutation::Insertion(i, z) => {
            if let Some(ins) = p.insertions.get_mut(i) {
                ins.at = z;
            }
        }
        Mutation::DropInsertions => p.insertions.clear(),
        Mutation::Omega(o) => p.omega = o,
        Mutation::F(f) => p.f = f.map(|re| TensorSpec { re: Some(re), im: None, trace: None }),
        Mutation::Points(v) => p.points = v,
        Mutation::Samples(n) => cfg.numerics.samples = n,
        Mutation::Radius(r) => cfg.numerics.radius = r,
        Mutation::Delta(d) => cfg.numerics.delta = d,
        Mutation::Deltas(v) => cfg.numerics.deltas = v,
        Mutation::Epsilons(v) => cfg.numerics.epsilons = v,
        Mutation::Mobius(l) => p.mobius = Some(MobiusSpec::Dilation { lambda: l }),
        Mutation::Region(h) => p.region = Some(RegionSpec { center: [0.5, 0.5], half: h }),
    }
}

fn config() -> impl Strategy<Value = ExperimentConfig> {
    (prop::sample::select(ExperimentKind::ALL.to_vec()), prop::collection::vec(mutation(), 0..3)).prop_map(
        |(kind, muts)| {
            let mut cfg = base(kind);
            for m in muts {
                apply(&mut cfg, m);
            }
            cfg
        },
    )
}

#[test]
fn base_configs_are_valid() {
    for k in ExperimentKind::ALL {
        assert!(base(k).validate().is_ok(), "{k}: {:?}", base(k).validate().err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 96, ..ProptestConfig::default() })]

    #[test]
    fn no_panic_on_arbitrary_configs(cfg in config()) {
        let valid = cfg.validate().is_ok();
        match std::panic::catch_unwind(|| run(&cfg)) {
            Err(_) => prop_assert!(false, "panic on {cfg:?}"),
            Ok(Err(RunError::Config(_))) => prop_assert!(!valid),
            Ok(_) => prop_assert!(valid),
        }
    }

    #[test]
    fn hash_is_stable_under_toml_key_order(g in 0.1..1.9f64, seed in any::<u64>()) {
        let a = format!("experiment = \"kpz\"\nseed = {seed}\n[surface]\nkind = \"torus\"\n[physics]\ngamma = {g}\nmu = 1.0\n");
        let b = format!("seed = {seed}\nexperiment = \"kpz\"\n[physics]\nmu = 1.0\ngamma = {g}\n[surface]\nkind = \"torus\"\n");
        let ha = ExperimentConfig::from_toml(&a).unwrap().hash();
        prop_assert_eq!(ha, ExperimentConfig::from_toml(&b).unwrap().hash());
    }
}
