use adaptclk::features::{class_of_delay, format_dataset_csv, parse_dataset_csv, DelayClassConfig};
use adaptclk::isa::{gen_balanced_dataset, DatasetSpec, IsaError, OpMix, OperandDist};
use adaptclk::netlist::{build_exec_unit, GateDelays};
use adaptclk::oracle::ExecOracle;
use adaptclk::Exact;

fn spec(n_per_class: usize, seed: u64) -> DatasetSpec {
    DatasetSpec {
        n_per_class,
        mix: OpMix::uniform(),
        operand_dists: vec![OperandDist::Uniform32, OperandDist::SmallMagnitude, OperandDist::SparseBits],
        seed,
        max_attempts: 5_000_000,
    }
}

#[test]
fn balanced_and_labels_match_the_oracle() {
    let unit = build_exec_unit(32, 16, GateDelays::default()).unwrap();
    let t_wc = unit.netlist.static_longest_path().unwrap();
    let oracle = ExecOracle::new(&unit).unwrap();
    for n in [2, 3, 4] {
        let cfg = DelayClassConfig::<Exact>::standard(n, t_wc).unwrap();
        let ds = gen_balanced_dataset(&spec(150, n as u64), &cfg, |p, c| oracle.record(p, c).unwrap()).unwrap();
        let mut hist = vec![0usize; n];
        for (r, &l) in ds.records.iter().zip(&ds.labels) {
            hist[l] += 1;
            assert_eq!(class_of_delay(oracle.replay(r).unwrap().delay, &cfg).unwrap(), l);
        }
        assert!(hist.iter().all(|&h| h == 150), "{hist:?}");
        let (recs, labels) = parse_dataset_csv(&format_dataset_csv(&ds.records, &ds.labels)).unwrap();
        assert_eq!((recs, labels), (ds.records.clone(), ds.labels.clone()));
        let again = gen_balanced_dataset(&spec(150, n as u64), &cfg, |p, c| oracle.record(p, c).unwrap()).unwrap();
        assert_eq!(again, ds);
    }
}

#[test]
fn unreachable_class_reports_starvation() {
    let unit = build_exec_unit(32, 16, GateDelays::default()).unwrap();
    let t_wc = unit.netlist.static_longest_path().unwrap();
    let oracle = ExecOracle::new(&unit).unwrap();
    let cfg = DelayClassConfig::<Exact>::standard(4, t_wc).unwrap();
    // logic ops alone never reach the slow classes
    let s = DatasetSpec { mix: OpMix([0.0, 0.0, 1.0, 0.0]), max_attempts: 2000, ..spec(10, 1) };
    let r = gen_balanced_dataset(&s, &cfg, |p, c| oracle.record(p, c).unwrap());
    assert!(matches!(r, Err(IsaError::StarvedClass { .. })), "{r:?}");
}
