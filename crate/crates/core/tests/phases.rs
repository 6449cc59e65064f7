use nalgebra::Vector3;
use proptest::prelude::*;
use rampc::phases::*;

const DT: f64 = 0.05;

fn inputs(hook_gap: Vector3<f64>, drop_gap: Vector3<f64>, rho_h: f64, eps_p: f64) -> TransitionInputs {
    TransitionInputs {
        hook: hook_gap,
        payload_hook: Vector3::zeros(),
        payload: drop_gap,
        drop_platform: Vector3::zeros(),
        rho_h,
        eps_p,
    }
}

fn windows() -> impl Strategy<Value = TimeWindows> {
    (0.0f64..5.0, 0.5f64..5.0, 0.0f64..5.0, 0.5f64..5.0).prop_map(|(go, gw, po, pw)| {
        let gc = go + gw;
        TimeWindows::new(go, gc, gc + po, gc + po + pw).unwrap()
    })
}

fn axis(i: usize, r: f64) -> Vector3<f64> {
    let mut v = Vector3::zeros();
    v[i] = r;
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn phase_sequences_are_monotone_and_never_skip(
        w in windows(),
        gaps in proptest::collection::vec((0.0f64..0.06, 0.0f64..0.02), 300),
    ) {
        let mut s = PhaseState::default();
        let mut missed_at = None;
        for (k, (hg, dg)) in gaps.iter().enumerate() {
            let tr = advance(s, k as u64, DT, &inputs(axis(0, *hg), axis(1, *dg), 0.03, 0.01), &w);
            let (a, b) = (s.phase.index(), tr.state.phase.index());
            prop_assert!(b == a || b == a + 1, "{a} -> {b}");
            if b != a {
                prop_assert_eq!(tr.state.entered_at_step, k as u64);
                prop_assert_eq!(s.phase.next(), Some(tr.state.phase));
            }
            if tr.deadline_missed && missed_at.is_none() {
                missed_at = Some(k);
            }
            s = tr.state;
        }
        if let Some(k) = missed_at {
            let t = k as f64 * DT;
            prop_assert!(t > w.grasp_close || t > w.place_close);
        }
    }

    #[test]
    fn approach_edge_is_the_window_start(w in windows(), k in 0u64..250) {
        let tr = advance(PhaseState::default(), k, DT, &inputs(axis(0, 1.0), axis(0, 1.0), 0.03, 0.01), &w);
        prop_assert_eq!(tr.state.phase == Phase::PickUp, k >= (w.grasp_open / DT).round() as u64);
    }

    #[test]
    fn grasp_edge_matches_predicate(w in windows(), k in 0u64..250, gap in 0.0f64..0.06, dir in 0usize..3) {
        let s = PhaseState::new(Phase::PickUp);
        let inp = inputs(axis(dir, gap), axis(0, 1.0), 0.03, 0.01);
        let tr = advance(s, k, DT, &inp, &w);
        let expect = k as f64 * DT <= w.grasp_close && gap <= 0.03;
        prop_assert_eq!(tr.state.phase == Phase::Transport, expect);
        prop_assert_eq!(tr.state.phase == Phase::PickUp, !expect);
    }

    #[test]
    fn dropoff_edge_matches_predicate(w in windows(), k in 0u64..250, gap in 0.0f64..0.02, dir in 0usize..3) {
        let s = PhaseState::new(Phase::Place);
        let inp = inputs(axis(0, 1.0), axis(dir, gap), 0.03, 0.01);
        let tr = advance(s, k, DT, &inp, &w);
        let expect = k as f64 * DT <= w.place_close && gap <= 0.01;
        prop_assert_eq!(tr.state.phase == Phase::Unhook, expect);
    }

    #[test]
    fn transport_edge_is_the_placement_window_start(w in windows(), k in 0u64..250) {
        let tr = advance(PhaseState::new(Phase::Transport), k, DT, &inputs(axis(0, 0.0), axis(0, 0.0), 0.03, 0.01), &w);
        prop_assert_eq!(tr.state.phase == Phase::Place, k >= (w.place_open / DT).round() as u64);
    }

    #[test]
    fn unhook_is_terminal(w in windows(), k in 0u64..1000) {
        let s = PhaseState::new(Phase::Unhook);
        let tr = advance(s, k, DT, &inputs(axis(0, 0.0), axis(0, 0.0), 0.03, 0.01), &w);
        prop_assert_eq!(tr.state, s);
        prop_assert!(!tr.deadline_missed);
    }
}

#[test]
fn grasp_fires_exactly_at_the_capture_radius() {
    let w = TimeWindows::new(0.0, 10.0, 12.0, 20.0).unwrap();
    let s = PhaseState::new(Phase::PickUp);
    for dir in 0..3 {
        let on = advance(s, 10, DT, &inputs(axis(dir, 0.03), axis(0, 1.0), 0.03, 0.01), &w);
        assert_eq!(on.state.phase, Phase::Transport);
        let off = advance(s, 10, DT, &inputs(axis(dir, 0.03f64.next_up()), axis(0, 1.0), 0.03, 0.01), &w);
        assert_eq!(off.state.phase, Phase::PickUp);
    }
}

#[test]
fn dropoff_fires_exactly_at_the_tolerance() {
    let w = TimeWindows::new(0.0, 10.0, 12.0, 20.0).unwrap();
    let s = PhaseState::new(Phase::Place);
    let on = advance(s, 300, DT, &inputs(axis(0, 1.0), axis(2, 0.01), 0.03, 0.01), &w);
    assert_eq!(on.state.phase, Phase::Unhook);
    let off = advance(s, 300, DT, &inputs(axis(0, 1.0), axis(2, 0.01f64.next_up()), 0.03, 0.01), &w);
    assert_eq!(off.state.phase, Phase::Place);
}

#[test]
fn deadline_is_inclusive() {
    let w = TimeWindows::new(0.0, 10.0, 12.0, 20.0).unwrap();
    let s = PhaseState::new(Phase::PickUp);
    let far = inputs(axis(0, 1.0), axis(0, 1.0), 0.03, 0.01);
    assert!(!advance(s, 200, DT, &far, &w).deadline_missed);
    assert!(advance(s, 201, DT, &far, &w).deadline_missed);
    let grasp = inputs(axis(0, 0.0), axis(0, 1.0), 0.03, 0.01);
    assert_eq!(advance(s, 200, DT, &grasp, &w).state.phase, Phase::Transport);
}

#[test]
fn window_steps_round_to_nearest() {
    let w = TimeWindows::new(6.0, 10.0, 16.0, 22.0).unwrap();
    assert_eq!(w.grasp_open_step(0.05), 120);
    assert_eq!(w.place_open_step(0.05), 320);
    let odd = TimeWindows::new(0.074, 1.0, 1.026, 2.0).unwrap();
    assert_eq!(odd.grasp_open_step(0.05), 1);
    assert_eq!(odd.place_open_step(0.05), 21);
}

#[test]
fn phases_carry_payload_only_while_attached() {
    let carried: Vec<bool> = Phase::ALL.iter().map(|p| p.carries_payload()).collect();
    assert_eq!(carried, vec![false, false, true, true, false]);
    for p in Phase::ALL {
        assert_eq!(Phase::from_index(p.index()).unwrap(), p);
    }
    assert_eq!(Phase::Unhook.next(), None);
}
