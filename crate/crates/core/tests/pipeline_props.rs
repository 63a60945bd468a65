use adaptclk::features::{class_of_delay, DelayClassConfig};
use adaptclk::isa::{Instruction, OpKind, SubOp, Trace};
use adaptclk::oracle::ProfileRecord;
use adaptclk::pipeline::{simulate, simulate_classes, AlwaysSlowest, EnergyModel, Perfect, PipelineConfig, PipelineError};
use adaptclk::Exact;
use proptest::prelude::*;

const T_WC: u64 = 4000;

fn records(delays: &[u64]) -> (Trace, Vec<ProfileRecord>) {
    let recs: Vec<ProfileRecord> = delays
        .iter()
        .enumerate()
        .map(|(i, &delay)| ProfileRecord {
            instr: Instruction::new(OpKind::Arith, SubOp::Add, i as u32, 7),
            prev_kind: OpKind::Arith,
            prev_subop: SubOp::Add,
            prev_op1: 0,
            prev_op2: 0,
            prev_output: 0,
            delay,
        })
        .collect();
    (Trace { instructions: recs.iter().map(|r| r.instr).collect(), seed: 0 }, recs)
}

fn exact_energy(p_ml: Exact) -> EnergyModel<Exact> {
    EnergyModel::frequency_proportional(Exact::from_integer(1), p_ml)
}

fn trace_and_predictions() -> impl Strategy<Value = (usize, Vec<u64>, Vec<usize>)> {
    (2usize..=4, 1usize..120).prop_flat_map(|(n, len)| {
        (Just(n), prop::collection::vec(0..=T_WC, len), prop::collection::vec(0..n, len))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn speedups_are_ordered((n, delays, predicted) in trace_and_predictions()) {
        let (_, profile) = records(&delays);
        let pc = PipelineConfig::new(DelayClassConfig::<Exact>::standard(n, T_WC).unwrap());
        let r = simulate_classes(&profile, &predicted, &pc, &exact_energy(Exact::from_integer(0))).unwrap();
        prop_assert!(r.speedup_practical <= r.speedup_nopenalty);
        prop_assert!(r.speedup_nopenalty <= r.speedup_ideal);
    }

    #[test]
    fn practical_time_is_periods_plus_penalties((n, delays, predicted) in trace_and_predictions()) {
        let (_, profile) = records(&delays);
        let classes = DelayClassConfig::<Exact>::standard(n, T_WC).unwrap();
        let pc = PipelineConfig::new(classes.clone());
        let r = simulate_classes(&profile, &predicted, &pc, &exact_energy(Exact::from_integer(0))).unwrap();
        let periods = classes.class_periods();
        let chosen: Exact = predicted.iter().map(|&c| periods[c]).sum();
        let violations = profile.iter().zip(&predicted).filter(|(r, &c)| class_of_delay(r.delay, &classes).unwrap() > c).count() as u64;
        prop_assert_eq!(r.violations, violations);
        prop_assert_eq!(r.time_practical, chosen + Exact::from_integer(4 * T_WC as i64 * violations as i64));
    }

    #[test]
    fn short_reexec_period_is_rejected(delay in 1u64..=T_WC) {
        let (_, profile) = records(&[delay]);
        let mut pc = PipelineConfig::new(DelayClassConfig::<Exact>::standard(2, T_WC).unwrap());
        pc.reexec_period = delay - 1;
        let r = simulate_classes(&profile, &[0], &pc, &exact_energy(Exact::from_integer(0)));
        if delay > 2200 {
            prop_assert!(matches!(r, Err(PipelineError::UncaughtViolation { .. })), "delay {} passed", delay);
        } else {
            prop_assert!(r.is_ok());
        }
    }

    #[test]
    fn extra_cut_never_lowers_ideal_speedup(delays in prop::collection::vec(0..=T_WC, 1..150), cut in 1i64..22) {
        let (trace, profile) = records(&delays);
        let coarse = DelayClassConfig::<Exact>::new(vec![Exact::new(22, 40)], T_WC).unwrap();
        let fine = DelayClassConfig::<Exact>::new(vec![Exact::new(cut, 40), Exact::new(22, 40)], T_WC).unwrap();
        let em = exact_energy(Exact::from_integer(0));
        let a = simulate(&trace, &profile, &mut Perfect(&coarse), &PipelineConfig::new(coarse.clone()), &em).unwrap();
        let b = simulate(&trace, &profile, &mut Perfect(&fine), &PipelineConfig::new(fine.clone()), &em).unwrap();
        prop_assert!(b.speedup_ideal >= a.speedup_ideal);
    }

    #[test]
    fn perfect_prediction_conserves_energy(n in 2usize..=4, delays in prop::collection::vec(0..=T_WC, 1..150)) {
        let (trace, profile) = records(&delays);
        let classes = DelayClassConfig::<Exact>::standard(n, T_WC).unwrap();
        let pc = PipelineConfig::new(classes.clone());
        let r = simulate(&trace, &profile, &mut Perfect(&classes), &pc, &exact_energy(Exact::from_integer(0))).unwrap();
        prop_assert_eq!(r.energy, r.energy_baseline);
        prop_assert_eq!(r.speedup_practical, r.speedup_ideal);
        let m = simulate(&trace, &profile, &mut Perfect(&classes), &pc, &exact_energy(Exact::new(1, 50))).unwrap();
        prop_assert!(m.energy > m.energy_baseline);
    }

    #[test]
    fn slowest_is_baseline(n in 2usize..=4, delays in prop::collection::vec(0..=T_WC, 0..150)) {
        let (trace, profile) = records(&delays);
        let pc = PipelineConfig::new(DelayClassConfig::<Exact>::standard(n, T_WC).unwrap());
        let r = simulate(&trace, &profile, &mut AlwaysSlowest(n - 1), &pc, &exact_energy(Exact::from_integer(0))).unwrap();
        prop_assert_eq!(r.speedup_practical, Exact::from_integer(1));
        prop_assert_eq!(r.violations, 0);
        prop_assert_eq!(r.time_practical, Exact::from_integer((delays.len() as u64 * T_WC) as i64));
    }
}

#[test]
fn misaligned_profile_is_rejected() {
    let (mut trace, profile) = records(&[10, 20, 30]);
    let pc = PipelineConfig::new(DelayClassConfig::<Exact>::standard(2, T_WC).unwrap());
    let em = exact_energy(Exact::from_integer(0));
    trace.instructions[1].op1 ^= 1;
    assert!(matches!(simulate(&trace, &profile, &mut AlwaysSlowest(1), &pc, &em), Err(PipelineError::Misaligned { index: 1 })));
    trace.instructions.pop();
    assert!(matches!(simulate(&trace, &profile, &mut AlwaysSlowest(1), &pc, &em), Err(PipelineError::Length { .. })));
    let (trace, profile) = records(&[10]);
    assert!(matches!(simulate(&trace, &profile, &mut |_: &ProfileRecord| 5, &pc, &em), Err(PipelineError::ClassOutOfRange { .. })));
}
