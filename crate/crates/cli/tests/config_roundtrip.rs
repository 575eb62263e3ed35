use confbound_cli::config::{parse_levels, CommandKind, Level, RunConfig};
use proptest::prelude::*;

fn command() -> impl Strategy<Value = CommandKind> {
    prop_oneof![
        Just(CommandKind::Fit),
        Just(CommandKind::Region),
        Just(CommandKind::Bands),
        Just(CommandKind::Geodesics),
        Just(CommandKind::Bench),
    ]
}

fn level() -> impl Strategy<Value = Level> {
    prop_oneof![(0.05..5.0f64).prop_map(Level::Sigma), (0.01..0.999f64).prop_map(Level::Q)]
}

fn model() -> impl Strategy<Value = &'static str> {
    prop::sample::select(vec!["toy-linear", "toy-repar-3", "sir", "distance-modulus"])
}

prop_compose! {
    fn config()(
        cmd in command(),
        model in model(),
        levels in prop::collection::vec(level(), 1..4),
        dof in prop::option::of(1usize..4),
        rtol_exp in prop::collection::vec(-14i32..-3, 1..4),
        theta0 in prop::option::of(prop::collection::vec(-10.0..10.0f64, 2)),
        slices in prop::option::of(3usize..60),
        xmin in prop::option::of(-5.0..0.0f64),
        span in 0.1..10.0f64,
        count in prop::option::of(1usize..200),
        length in prop::option::of(0.01..5.0f64),
        grids in prop::collection::vec(2usize..500, 0..3),
        injective in any::<bool>(),
    ) -> RunConfig {
        use CommandKind::*;
        let mut c = RunConfig::new(cmd, model);
        if model == "distance-modulus" {
            c.data = Some("scp.csv".into());
        }
        c.levels = if matches!(cmd, Geodesics | Bench) { levels[..1].to_vec() } else { levels };
        c.dof = dof;
        c.theta0 = theta0;
        if cmd != Fit {
            let r: Vec<f64> = rtol_exp.iter().map(|e| 10f64.powi(*e)).collect();
            c.rtol = if cmd == Bench { r } else { r[..1].to_vec() };
        }
        if matches!(cmd, Region | Bands) {
            c.slices = slices;
        }
        if cmd == Bands {
            c.xmin = xmin;
            c.xmax = xmin.map(|a| a + span);
            c.assume_injective = injective;
        }
        if cmd == Geodesics {
            c.count = count;
            c.length = length;
        }
        if cmd == Bench {
            c.grids = grids;
        }
        c
    }
}

proptest! {
    #[test]
    fn canonical_text_round_trips(c in config()) {
        let c = c.normalize().unwrap();
        let text = c.to_canonical();
        let back = RunConfig::from_canonical(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_canonical(), text);
    }

    #[test]
    fn normalizing_is_idempotent(c in config()) {
        let once = c.normalize().unwrap();
        prop_assert_eq!(once.clone().normalize().unwrap(), once);
    }

    #[test]
    fn level_lists_reparse_from_their_display(levels in prop::collection::vec(level(), 1..5)) {
        let text: Vec<String> = levels.iter().map(Level::to_string).collect();
        prop_assert_eq!(parse_levels(&text.join(",")).unwrap(), levels);
    }
}
