use proptest::prelude::*;

use flowstyle::attention::{masked_attention, AttentionMask, TokenMatrix};
use flowstyle::decomposition::sample_indices;
use flowstyle::flow::{combine_and, dilate, flow_mask, reference_masks, FlowFieldSequence};
use flowstyle::frequency::{low_part, LowPassFilter};
use flowstyle::pipeline::{arrange_references, GuidanceSchedule, ReferencePolicy, ScheduleParams};
use flowstyle::tensor::{adain, Dims4, Grid4};

fn grid() -> impl Strategy<Value = Grid4> {
    (1usize..3, 1usize..3, 2usize..9, 2usize..9).prop_flat_map(|(s, c, h, w)| {
        proptest::collection::vec(-4.0f32..4.0, s * c * h * w)
            .prop_map(move |data| Grid4::new(Dims4::new(s, c, h, w), data).unwrap())
    })
}

fn grid_pair() -> impl Strategy<Value = (Grid4, Grid4)> {
    grid().prop_flat_map(|a| {
        let d = a.dims();
        proptest::collection::vec(-4.0f32..4.0, d.len())
            .prop_map(move |data| (a.clone(), Grid4::new(d, data).unwrap()))
    })
}

fn flows() -> impl Strategy<Value = FlowFieldSequence> {
    (2usize..5, 1usize..6, 1usize..6).prop_flat_map(|(t, h, w)| {
        let n = (t - 1) * h * w;
        (
            proptest::collection::vec((-2.0f32..2.0, -2.0f32..2.0), n),
            proptest::collection::vec((-2.0f32..2.0, -2.0f32..2.0), n),
        )
            .prop_map(move |(f, b)| {
                FlowFieldSequence::from_fn(t, h, w, |k, y, x| f[(k * h + y) * w + x], |k, y, x| {
                    b[(k * h + y) * w + x]
                })
                .unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adain_is_idempotent_in_target_stats((x, t) in grid_pair()) {
        let once = adain(&x, &t).unwrap();
        let twice = adain(&once, &t).unwrap();
        prop_assert!(twice.max_abs_diff(&once).unwrap() < 1e-5);
    }

    #[test]
    fn low_pass_is_a_projection(x in grid(), cutoff in 0.05f64..1.0) {
        let f = LowPassFilter::new(cutoff).unwrap();
        let once = low_part(&x, &f).unwrap();
        let twice = low_part(&once, &f).unwrap();
        prop_assert!(twice.max_abs_diff(&once).unwrap() < 1e-5);
    }

    #[test]
    fn grid_bytes_round_trip(x in grid()) {
        prop_assert_eq!(Grid4::from_bytes(&x.to_bytes()).unwrap(), x);
    }

    #[test]
    fn dilation_and_gating_bound_the_flow_mask(f in flows(), radius in 0usize..3) {
        let m = flow_mask(&f).unwrap();
        let d = dilate(&m, radius);
        prop_assert!(m.is_subset_of(&d));
        prop_assert!(d.is_subset_of(&dilate(&m, radius + 1)));
        let refs: Vec<usize> = (0..f.frames()).step_by(2).collect();
        let gated = combine_and(&m, &reference_masks(&f, &refs).unwrap()).unwrap();
        prop_assert!(gated.is_subset_of(&m));
    }

    #[test]
    fn masked_attention_rows_are_convex_combinations(
        (nq, nk, seed) in (1usize..6, 1usize..8, any::<u64>()),
    ) {
        let mut state = seed | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 2001) as f32 / 500.0 - 2.0
        };
        let q = TokenMatrix::from_rows(3, (0..nq * 3).map(|_| next()).collect()).unwrap();
        let k = TokenMatrix::from_rows(3, (0..nk * 3).map(|_| next()).collect()).unwrap();
        let v = TokenMatrix::from_rows(2, (0..nk * 2).map(|_| next()).collect()).unwrap();
        let mask = AttentionMask::from_fn(nq, nk, |i, j| (i + 2 * j) % 3 != 0);
        let out = masked_attention(&q, &k, &v, &mask).unwrap();
        for c in 0..2 {
            let lo = (0..nk).map(|j| v.row(j)[c]).fold(f32::INFINITY, f32::min);
            let hi = (0..nk).map(|j| v.row(j)[c]).fold(f32::NEG_INFINITY, f32::max);
            for i in 0..nq {
                prop_assert!(out.row(i)[c] >= lo - 1e-5 && out.row(i)[c] <= hi + 1e-5);
            }
        }
    }

    #[test]
    fn generated_schedules_respect_their_invariants(
        steps in 2usize..40,
        ihc_fraction in 0.0f64..1.0,
        beta in 0.0f32..0.6,
        gamma in 0.0f32..0.4,
        gamma_fraction in 0.0f64..1.0,
    ) {
        let p = ScheduleParams { ihc_fraction, beta, gamma, gamma_fraction, ..ScheduleParams::default() };
        let s = GuidanceSchedule::generate(steps, &p).unwrap();
        prop_assert_eq!(s.xi(0), 0.0);
        prop_assert_eq!(s.xi(steps - 1), 1.0);
        let gamma_steps = (gamma_fraction * steps as f64).ceil() as usize;
        for i in 0..steps {
            if i < steps - gamma_steps {
                prop_assert_eq!(s.gamma(i), 0.0);
            }
            if !s.ihc().window().contains(&i) {
                prop_assert_eq!(s.lambda(i), 0.0);
            }
            prop_assert!(s.beta() + s.gamma(i) <= 1.0);
        }
        prop_assert_eq!(s.sigmas().len(), steps + 1);
    }

    #[test]
    fn references_come_from_the_sampled_frames(blocks in 1usize..6, r in 1usize..6, offset_seed in 0usize..6) {
        let frames = 1 + blocks * r;
        let offset = 1 + offset_seed % r;
        let sampled = sample_indices(frames, r, offset).unwrap();
        for policy in [ReferencePolicy::FirstOnly, ReferencePolicy::FirstMidLast, ReferencePolicy::AllSampled] {
            if let Ok(arr) = arrange_references(frames, r, offset, policy) {
                prop_assert_eq!(arr.frames()[0], 0);
                prop_assert!(arr.frames().windows(2).all(|p| p[0] < p[1]));
                prop_assert!(arr.frames().iter().all(|f| sampled.indices().contains(f)));
            }
        }
    }
}
