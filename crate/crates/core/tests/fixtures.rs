use specsurg::fixtures::{fixture_ids, run_all, run_fixture};

#[test]
fn every_registered_fixture_passes() {
    let summary = run_all(None);
    println!("{}", summary.to_text());
    for r in &summary.reports {
        for n in &r.notes {
            println!("{}: {n}", r.id);
        }
    }
    assert_eq!(summary.reports.len(), fixture_ids().len());
    assert!(summary.all_passed());
}

#[test]
fn unknown_fixture_id_is_an_error() {
    assert!(run_fixture("ex11.1").is_err());
}
