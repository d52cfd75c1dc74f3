use std::fs;
use std::path::Path;

use specsurg::problem::ProblemSpec;
use specsurg::surgery::parse_plans;

fn seeds(dir: &str) -> Vec<(String, String)> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(dir);
    let mut out: Vec<(String, String)> = fs::read_dir(root)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn problem_seeds_parse_except_the_invalid_boundary_one() {
    for (name, text) in seeds("problem_json") {
        let parsed = ProblemSpec::from_json_str(&text);
        if name.starts_with("bad_") {
            assert!(parsed.is_err(), "{name} should be rejected");
        } else {
            assert!(parsed.is_ok(), "{name}: {:?}", parsed.err());
        }
    }
}

#[test]
fn plan_seeds_parse_and_round_trip() {
    for (name, text) in seeds("plan_json") {
        let plans = parse_plans(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        let again: Vec<String> = plans.iter().map(|p| p.to_json().to_string()).collect();
        let reparsed = parse_plans(&format!("[{}]", again.join(","))).unwrap();
        assert_eq!(plans, reparsed, "{name}");
    }
}
