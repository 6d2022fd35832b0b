use ptt_core::autograd::Fault;
use ptt_core::gradcheck::{run_component, Component, GradCheckConfig};

#[test]
fn every_block_passes() {
    for report in run_component(Component::All, &GradCheckConfig::default()) {
        let worst = report
            .params
            .iter()
            .map(|p| format!("{} {:.2e} ({} checked, {} skipped)", p.name, p.max_rel_error, p.checked, p.skipped))
            .collect::<Vec<_>>();
        assert!(report.passed(), "{}: {:?} {:#?}", report.component, report.failure, worst);
    }
}

#[test]
fn corrupted_rules_fail() {
    for fault in [Fault::LinearWeightGradScaled, Fault::ReluLeaksNegative] {
        let cfg = GradCheckConfig {
            fault: Some(fault),
            ..GradCheckConfig::default()
        };
        let reports = run_component(Component::Attention, &cfg);
        assert!(!reports[0].passed(), "{fault:?}");
    }
}

#[test]
fn selectors_parse() {
    assert_eq!("ptt".parse::<Component>().unwrap(), Component::Attention);
    assert_eq!("all".parse::<Component>().unwrap(), Component::All);
    assert!("nope".parse::<Component>().is_err());
}
