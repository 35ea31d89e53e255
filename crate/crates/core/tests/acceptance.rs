//! Acceptance suite: every criterion prints one pass/fail line and pins
//! its tolerance in code.

mod common;

use std::io::Cursor;

use once_cell::sync::Lazy;

use dsapack::baseline::{simulate, FitPolicy};
use dsapack::boxing::{box_to_uniform, pack, BoxNode, BoxSignal, PackConfig, PackCtx, SplitParams};
use dsapack::igc::{igc_color, IntervalItem};
use dsapack::metrics::{
    ba_upper_bound, fragmentation, load_profile, makespan, robson_bound, validate_placement,
    PlacedJob, Placement,
};
use dsapack::trace::{
    generate_trace, jobs_from_trace, parse_trace, LifetimeDist, SizeDist, SizingPolicy, Trace,
};

use common::{brute_force_max_overlap, dense_grid_gap_area};

fn pass(name: &str, detail: &str) {
    println!("acceptance {name}: PASS ({detail})");
}

/// Published-value anchors for the Robson bound formula, within 0.05%.
#[test]
fn a01_robson_bound_anchors() {
    for (max_load, h_max, expected) in [
        (4_919_904u64, 528_376u64, 46_766_652f64),
        (1_549_032, 675_832, 14_999_513.0),
    ] {
        let got = robson_bound(max_load, h_max).unwrap() as f64;
        let rel = (got - expected).abs() / expected;
        assert!(rel <= 5e-4, "robson({max_load},{h_max}) = {got}, expected {expected}");
    }
    pass("01 robson bound anchors", "two published rows within 0.05%");
}

/// Published-threshold anchors for the split parameters (log base 10):
/// practical epsilons reproduce the convergence thresholds within 0.5%,
/// theoretical epsilons land below h_min and trip the empty-small-set
/// signal.
#[test]
fn a02_split_threshold_anchors() {
    let practical: [(u64, u64, f64, f64); 4] = [
        (8, 524_288, 6.19, 8.27),
        (8, 1_048_576, 6.55, 10.01),
        (16, 524_288, 6.12, 18.91),
        (8, 75_497_472, 6.59, 9.62),
    ];
    for (h_min, h_max, eps, expected) in practical {
        let p = SplitParams::compute(h_min, h_max, eps, 10.0).unwrap();
        let rel = (p.threshold - expected).abs() / expected;
        assert!(
            rel <= 5e-3,
            "threshold for ({h_min},{h_max},{eps}) = {}, expected {expected}",
            p.threshold
        );
    }
    let theoretical: [(u64, u64, f64); 4] = [
        (8, 524_288, 0.76),
        (8, 1_048_576, 0.97),
        (16, 524_288, 0.75),
        (8, 75_497_472, 0.98),
    ];
    for (h_min, h_max, eps) in theoretical {
        let p = SplitParams::compute(h_min, h_max, eps, 10.0).unwrap();
        assert!(p.threshold < h_min as f64);
        let items = vec![
            BoxNode::leaf(dsapack::Job::new(0, 0, 10, h_min)),
            BoxNode::leaf(dsapack::Job::new(1, 1, 11, h_max)),
        ];
        let mut ctx = PackCtx::new(0, 10.0, 64);
        assert_eq!(
            box_to_uniform(items, eps, &mut ctx),
            Err(BoxSignal::EmptySmallSet),
            "({h_min},{h_max},{eps}) must trip the empty-small-set guard"
        );
    }
    pass(
        "02 split threshold anchors",
        "4 practical rows within 0.5%, 4 theoretical rows trip the guard",
    );
}

/// The worked three-block example end to end: job conversion, the
/// caption's placement, its makespan, validity and its fragmentation of
/// 5/22 with exactly two gap regions, cross-checked by the dense grid.
#[test]
fn a03_worked_example() {
    let trace = parse_trace(Cursor::new(b"a 0 1\na 1 2\nf 0\na 2 3\nf 1\nf 2\n")).unwrap();
    let set = jobs_from_trace(&trace, SizingPolicy::Identity).unwrap();
    assert_eq!(
        set.jobs,
        vec![
            dsapack::Job::new(0, 0, 3, 1),
            dsapack::Job::new(1, 1, 6, 2),
            dsapack::Job::new(2, 3, 6, 3),
        ]
    );
    let placement = Placement::new(
        "caption",
        vec![
            PlacedJob::new(0, 0, 3, 1, 1),
            PlacedJob::new(1, 1, 6, 2, 3),
            PlacedJob::new(2, 3, 6, 3, 0),
        ],
    );
    assert!(validate_placement(&placement).is_valid());
    assert_eq!(makespan(&placement), 5);
    let report = fragmentation(&placement, 4096).unwrap();
    assert!((report.fragmentation - 5.0 / 22.0).abs() <= 1e-9);
    assert_eq!(report.gap_count, 2);
    assert_eq!(report.gap_area, dense_grid_gap_area(&placement, 4096));
    pass(
        "03 worked example",
        "jobs {(0,3,1),(1,6,2),(3,6,3)}, makespan 5, fragmentation 5/22, 2 gap regions",
    );
}

/// Coloring optimality: on 1,000 seeded random interval sets the color
/// count equals the brute-force maximum overlap, exactly.
#[test]
fn a04_igc_optimality() {
    use rand::{Rng, SeedableRng};
    let mut failures = 0;
    for seed in 0..1000u64 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = 1 + (seed as usize * 37) % 200;
        let spans: Vec<(u64, u64)> = (0..n)
            .map(|_| {
                let start = rng.gen_range(0..1000u64);
                let len = rng.gen_range(1..=200u64);
                (start, start + len)
            })
            .collect();
        let items: Vec<IntervalItem> = spans
            .iter()
            .enumerate()
            .map(|(i, &(s, e))| IntervalItem::new(i as u64, s, e))
            .collect();
        let coloring = igc_color(&items);
        if coloring.n_colors != brute_force_max_overlap(&spans) {
            failures += 1;
        }
    }
    assert_eq!(failures, 0, "{failures} instances off the brute-force optimum");
    pass("04 igc optimality", "1000 seeded instances, colors == max overlap exactly");
}

/// Fragmentation sweep equals the dense-grid oracle exactly on 200 seeded
/// placements with short clocks and addresses within two pages.
#[test]
fn a05_fragmentation_oracle_equivalence() {
    let mut checked = 0;
    let mut seed = 0u64;
    while checked < 200 {
        seed += 1;
        let n = 4 + (seed as usize % 32);
        let dist = SizeDist::Uniform { lo: 1, hi: 12 };
        let lifetime = LifetimeDist { lo: 1, hi: 8 };
        let trace = generate_trace(n, &dist, &lifetime, seed).unwrap();
        let policy = if seed % 2 == 0 { FitPolicy::FirstFit } else { FitPolicy::BestFit };
        let mut placement = simulate(&trace, SizingPolicy::Identity, policy).unwrap();
        match seed % 3 {
            1 => placement.jobs.iter_mut().for_each(|j| j.addr += 137),
            2 => placement.jobs.iter_mut().for_each(|j| j.addr *= 2),
            _ => {}
        }
        let set = jobs_from_trace(&trace, SizingPolicy::Identity).unwrap();
        let top = placement.jobs.iter().map(PlacedJob::top).max().unwrap_or(0);
        if set.clock_end > 512 || top >= 2 * 4096 {
            continue;
        }
        let report = fragmentation(&placement, 4096).unwrap();
        let oracle = dense_grid_gap_area(&placement, 4096);
        assert_eq!(
            report.gap_area, oracle,
            "seed {seed}: sweep {} vs dense grid {oracle}",
            report.gap_area
        );
        checked += 1;
    }
    pass(
        "05 fragmentation oracle equivalence",
        "200 seeded placements, sweep == dense grid exactly",
    );
}

/// The shared corpus for the packing criteria: 50 seeded traces with
/// 100-2000 jobs and mixed size distributions, packed once.
struct CorpusRun {
    trace: Trace,
    max_load: u64,
    h_max: u64,
    packed: Option<Placement>,
}

static CORPUS: Lazy<Vec<CorpusRun>> = Lazy::new(|| {
    (0..50u64)
        .map(|seed| {
            let n = 100 + ((seed as usize * 97) % 1901);
            let dist = match seed % 5 {
                0 => SizeDist::Uniform { lo: 8, hi: 512 },
                1 => SizeDist::Uniform { lo: 16, hi: 4096 },
                2 => SizeDist::Pareto { scale: 16.0, shape: 1.3 },
                3 => SizeDist::Uniform { lo: 1, hi: 64 },
                _ => SizeDist::Pareto { scale: 64.0, shape: 2.0 },
            };
            let lifetime = LifetimeDist { lo: 1, hi: 32 + (seed * 13) % 97 };
            let trace = generate_trace(n, &dist, &lifetime, seed).unwrap();
            let set = jobs_from_trace(&trace, SizingPolicy::Identity).unwrap();
            let profile = load_profile(&set.jobs);
            let config = PackConfig { seed, ..Default::default() };
            let packed = pack(&set, &config).ok().map(|o| o.placement);
            CorpusRun {
                trace,
                max_load: profile.max_load,
                h_max: profile.h_max,
                packed,
            }
        })
        .collect()
});

/// Packing soundness: at least 45 of the 50 corpus traces terminate
/// within the retry budget, and every produced placement is valid,
/// conserves the input jobs with original heights, and spans at least the
/// maximum load.
#[test]
fn a06_pack_soundness() {
    let mut terminated = 0;
    for (i, run) in CORPUS.iter().enumerate() {
        let Some(placement) = &run.packed else { continue };
        terminated += 1;
        assert!(
            validate_placement(placement).is_valid(),
            "trace {i}: packed placement has conflicts"
        );
        let set = jobs_from_trace(&run.trace, SizingPolicy::Identity).unwrap();
        let mut expected: Vec<(u64, u64)> = set.jobs.iter().map(|j| (j.id, j.height)).collect();
        expected.sort_unstable();
        let mut got: Vec<(u64, u64)> =
            placement.jobs.iter().map(|j| (j.id, j.height)).collect();
        got.sort_unstable();
        assert_eq!(expected, got, "trace {i}: job conservation violated");
        assert!(
            makespan(placement) >= run.max_load,
            "trace {i}: makespan below the load floor"
        );
    }
    assert!(terminated >= 45, "only {terminated}/50 traces terminated");
    pass(
        "06 pack soundness",
        &format!("{terminated}/50 terminated; all outputs valid, conserving, above the load floor"),
    );
}

/// Bound conformance (soft): at least 60% of the successful packs stay
/// within the offline upper bound; the full ratio distribution is
/// reported either way.
#[test]
fn a07_pack_bound_conformance() {
    let mut ratios: Vec<f64> = Vec::new();
    let mut conforming = 0usize;
    for run in CORPUS.iter() {
        let Some(placement) = &run.packed else { continue };
        let bound = ba_upper_bound(run.max_load, run.h_max);
        let ratio = makespan(placement) as f64 / bound as f64;
        if ratio <= 1.0 {
            conforming += 1;
        }
        ratios.push(ratio);
    }
    let mut sorted = ratios.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct = 100.0 * conforming as f64 / ratios.len() as f64;
    println!(
        "acceptance 07 distribution: n={} min={:.3} median={:.3} max={:.3}",
        sorted.len(),
        sorted.first().unwrap(),
        sorted[sorted.len() / 2],
        sorted.last().unwrap()
    );
    assert!(
        pct >= 60.0,
        "only {conforming}/{} runs ({pct:.1}%) within the upper bound",
        ratios.len()
    );
    pass(
        "07 pack bound conformance",
        &format!("{conforming}/{} successful runs ({pct:.1}%) within the bound", ratios.len()),
    );
}

/// Robson outperformance (soft): the two online baselines beat the
/// worst-case lower bound on at least 90% of the corpus traces.
#[test]
fn a08_baseline_robson_outperformance() {
    let mut wins = 0usize;
    let mut total = 0usize;
    for run in CORPUS.iter() {
        let bound = robson_bound(run.max_load, run.h_max).unwrap();
        for policy in [FitPolicy::FirstFit, FitPolicy::BestFit] {
            let placement = simulate(&run.trace, SizingPolicy::Identity, policy).unwrap();
            total += 1;
            if makespan(&placement) < bound {
                wins += 1;
            }
        }
    }
    let pct = 100.0 * wins as f64 / total as f64;
    assert!(pct >= 90.0, "baselines beat the bound on only {wins}/{total} ({pct:.1}%)");
    pass(
        "08 baseline robson outperformance",
        &format!("{wins}/{total} simulations ({pct:.1}%) beat the bound"),
    );
}

/// Tightening: on 1,000 seeded valid placements it preserves validity,
/// never raises any job's address and never raises the makespan.
#[test]
fn a09_tighten_properties() {
    use dsapack::boxing::tighten;
    let mut checked = 0;
    for seed in 0..1000u64 {
        let n = 5 + (seed as usize % 60);
        let dist = SizeDist::Uniform { lo: 1, hi: 256 };
        let trace = generate_trace(n, &dist, &LifetimeDist { lo: 1, hi: 24 }, seed).unwrap();
        let policy = if seed % 2 == 0 { FitPolicy::FirstFit } else { FitPolicy::BestFit };
        let sizing = if seed % 3 == 0 {
            SizingPolicy::RoundUpToMultiple(16)
        } else {
            SizingPolicy::Identity
        };
        let mut placement = simulate(&trace, sizing, policy).unwrap();
        let scale = 1 + seed % 3;
        let offset = [0u64, 137, 4096][(seed % 3) as usize];
        placement
            .jobs
            .iter_mut()
            .for_each(|j| j.addr = j.addr * scale + offset);
        assert!(validate_placement(&placement).is_valid());

        let tightened = tighten(&placement).unwrap();
        assert!(
            validate_placement(&tightened).is_valid(),
            "seed {seed}: tighten broke validity"
        );
        for (before, after) in placement.jobs.iter().zip(&tightened.jobs) {
            assert!(
                after.addr <= before.addr,
                "seed {seed}: job {} moved up from {} to {}",
                before.id,
                before.addr,
                after.addr
            );
        }
        assert!(
            makespan(&tightened) <= makespan(&placement),
            "seed {seed}: makespan grew"
        );
        checked += 1;
    }
    assert_eq!(checked, 1000);
    pass(
        "09 tighten properties",
        "1000 seeded placements: validity kept, no address or makespan growth",
    );
}
