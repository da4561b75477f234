use std::collections::BTreeMap;

use iasearch_core::reference::resnet50;
use iasearch_core::search::{adjust, expand, greedy_fill, shrink};
use iasearch_core::{parse_arch, run_pipeline, ArchitectureGraph, Metric, SearchConfig, SearchError, TieRule, WidthAssignment};
use iasearch_testkit::{brute_cost, exhaustive_best_fill, grid_scan, random_toy_graph, spectra_for};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Case {
    graph: ArchitectureGraph,
    adjusted: WidthAssignment,
    budget: f64,
}

fn case(seed: u64, metric: Metric, multiple: u32) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graph = random_toy_graph(&mut rng, 5);
    let dims: BTreeMap<String, usize> =
        graph.taps().iter().filter(|t| !t.fixed).map(|t| (t.id.clone(), rng.random_range(1..=t.width as usize))).collect();
    let adjusted = adjust(&graph, &dims, multiple).unwrap();
    let budget = graph.cost(metric).unwrap() as f64 * rng.random_range(0.2..3.0);
    Case { graph, adjusted, budget }
}

fn config(metric: Metric, budget: f64, multiple: u32, precision: f64) -> SearchConfig {
    SearchConfig { multiple, min_width: multiple, omega_precision: precision, ..SearchConfig::new(metric, budget) }
}

fn metric_of(flag: bool) -> Metric {
    if flag { Metric::Macs } else { Metric::Params }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expand_agrees_with_grid_scan(seed in any::<u64>(), macs in any::<bool>(), wide in any::<bool>()) {
        let (metric, multiple) = (metric_of(macs), if wide { 32 } else { 8 });
        let c = case(seed, metric, multiple);
        let cfg = config(metric, c.budget, multiple, 0.01);
        let grid = grid_scan(&c.graph, &c.adjusted, metric, c.budget, multiple, multiple, 0.01, 8.0);
        prop_assume!(!grid.as_ref().is_some_and(|g| g.capped));
        match (expand(&c.graph, &c.adjusted, &cfg), grid) {
            (Ok(e), Some(g)) => {
                prop_assert_eq!(e.omega, g.omega);
                prop_assert_eq!(&e.widths, &g.widths);
                prop_assert_eq!(u128::from(e.cost), g.cost);
            }
            (Ok(e), None) => prop_assert_eq!(e.omega, 0.0),
            (Err(SearchError::Infeasible { .. }), None) => {}
            (got, want) => prop_assert!(false, "expand {:?} vs grid {:?}", got, want),
        }
    }

    #[test]
    fn pipeline_respects_budget_and_ties(seed in any::<u64>(), macs in any::<bool>(), wide in any::<bool>()) {
        let (metric, multiple) = (metric_of(macs), if wide { 32 } else { 8 });
        let c = case(seed, metric, multiple);
        let spectra = spectra_for(&c.graph, |_, w| (seed as usize % w) + 1);
        let cfg = config(metric, c.budget, multiple, 1e-4);
        let Ok(report) = run_pipeline(&c.graph, &spectra, &cfg) else { return Ok(()) };
        let widths = report.final_widths();
        prop_assert!(report.achieved_cost as f64 <= c.budget);
        prop_assert_eq!(u128::from(report.achieved_cost), brute_cost(&c.graph, &widths, metric));
        prop_assert!(report.achieved_cost >= report.rounded_cost);
        for (_, w) in widths.iter() {
            prop_assert!(w % multiple == 0 && w >= multiple);
        }
        for g in c.graph.tie_groups().iter().filter(|g| g.rule != TieRule::Fixed) {
            let first = widths.get(&g.members[0]);
            prop_assert!(g.members.iter().all(|m| widths.get(m) == first));
        }
        // Nothing more fits after the fill.
        for g in c.graph.tie_groups().iter().filter(|g| g.rule != TieRule::Fixed).map(|g| g.members.clone())
            .chain(c.graph.taps().iter().filter(|t| !t.fixed && t.tie_group.is_none()).map(|t| vec![t.id.clone()]))
        {
            let mut grown = widths.clone();
            for m in &g {
                grown.insert(m.clone(), widths.get(m).unwrap() + multiple);
            }
            let cost = brute_cost(&c.graph, &grown, metric);
            prop_assert!(cost as f64 > c.budget || cost == u128::from(report.achieved_cost));
        }
        // Same inputs, same bytes.
        prop_assert_eq!(run_pipeline(&c.graph, &spectra, &cfg).unwrap().to_json(), report.to_json());
    }

    #[test]
    fn greedy_never_beats_exhaustive(seed in any::<u64>()) {
        let c = case(seed, Metric::Params, 8);
        let cfg = config(Metric::Params, c.budget, 8, 1e-4);
        let Ok(e) = expand(&c.graph, &c.adjusted, &cfg) else { return Ok(()) };
        // Keep the enumeration small.
        prop_assume!(c.budget - e.cost as f64 <= 40.0 * 8.0 * 300.0);
        let filled = greedy_fill(&c.graph, &e.widths, &cfg).unwrap();
        let greedy_cost = brute_cost(&c.graph, &filled, Metric::Params);
        let best = exhaustive_best_fill(&c.graph, &e.widths, Metric::Params, c.budget, 8);
        prop_assert!(greedy_cost <= best);
        prop_assert!(greedy_cost >= u128::from(e.cost));
    }

    #[test]
    fn larger_budget_never_shrinks_the_multiplier(seed in any::<u64>(), macs in any::<bool>(), factor in 1.0f64..3.0) {
        let metric = metric_of(macs);
        let c = case(seed, metric, 8);
        let small = expand(&c.graph, &c.adjusted, &config(metric, c.budget, 8, 1e-3));
        let large = expand(&c.graph, &c.adjusted, &config(metric, c.budget * factor, 8, 1e-3));
        if let Ok(small) = small {
            let large = large.unwrap();
            prop_assert!(large.omega >= small.omega);
            prop_assert!(large.cost >= small.cost);
        }
    }
}

/// Two symmetric branches: every increment costs the same, so greedy is optimal.
#[test]
fn greedy_matches_exhaustive_on_symmetric_branches() {
    let g = parse_arch(
        r#"{
          "input": {"width": 1, "height": 1, "channels": 3},
          "taps": [
            {"id": "in", "width": 3, "fixed": true},
            {"id": "a", "width": 8},
            {"id": "b", "width": 8},
            {"id": "oa", "width": 5, "fixed": true},
            {"id": "ob", "width": 5, "fixed": true}
          ],
          "layers": [
            {"id": "la", "kind": "fc", "kernel": 1, "stride": 1, "input_tap": "in", "output_tap": "a"},
            {"id": "lb", "kind": "fc", "kernel": 1, "stride": 1, "input_tap": "in", "output_tap": "b"},
            {"id": "ha", "kind": "fc", "kernel": 1, "stride": 1, "input_tap": "a", "output_tap": "oa"},
            {"id": "hb", "kind": "fc", "kernel": 1, "stride": 1, "input_tap": "b", "output_tap": "ob"}
          ]
        }"#,
    )
    .unwrap();
    let start: WidthAssignment = [("a".to_string(), 8), ("b".to_string(), 8)].into_iter().collect();
    for budget in [208.0, 300.0, 1000.0, 1234.0] {
        let cfg = config(Metric::Params, budget, 8, 1e-4);
        let filled = greedy_fill(&g, &start, &cfg).unwrap();
        let best = exhaustive_best_fill(&g, &start, Metric::Params, budget, 8);
        assert_eq!(brute_cost(&g, &filled, Metric::Params), best, "budget {budget}");
        // Ties between equal increments go to the smaller tap id.
        assert!(filled.get("a").unwrap() >= filled.get("b").unwrap());
    }
}

#[test]
fn low_rank_final_stage_shrinks_while_earlier_stages_grow() {
    let g = resnet50();
    let spectra = spectra_for(&g, |id, w| if id.starts_with("conv5") { w / 8 } else { w });
    let budget = g.cost(Metric::Macs).unwrap() as f64;
    let report = run_pipeline(&g, &spectra, &SearchConfig::new(Metric::Macs, budget)).unwrap();
    assert!(report.omega > 1.0);
    assert!(report.achieved_cost as f64 <= budget && report.achieved_cost as f64 >= 0.98 * budget);
    // Checked before the fill, which may spend leftovers anywhere.
    for t in &report.taps {
        if t.tap_id.starts_with("conv5") {
            assert!(t.rounded < t.original, "{t:?}");
        } else {
            assert!(t.rounded >= t.original, "{t:?}");
        }
    }
}

#[test]
fn shrink_reports_missing_spectra() {
    let g = resnet50();
    let mut spectra = spectra_for(&g, |_, w| w);
    spectra.remove("conv3_2_1");
    assert!(matches!(shrink(&g, &spectra, 1e-3), Err(SearchError::MissingSpectrum(t)) if t == "conv3_2_1"));
}
