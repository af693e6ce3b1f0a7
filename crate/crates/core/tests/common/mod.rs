#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mtdc_opf::case::{parse_case, parse_scenario, NetworkCase, Scenario};

pub fn cases_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases")
}

pub fn case(name: &str) -> NetworkCase {
    parse_case(cases_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn scenario(name: &str) -> Scenario {
    parse_scenario(cases_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Every `.case` file shipped in `cases/`, sorted by name.
pub fn bundled_case_files() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(cases_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "case"))
        .collect();
    files.sort();
    files
}

pub const BACK_TO_BACK: &str = "\
mtdc-case 1
name back-to-back
baseMVA 100
baseKVdc 200
bus
1 3 0 0 0 0 1 0 1.1 0.9
2 2 80 20 0 0 1 0 1.1 0.9
end
gen
1 1 200 0 100 -100 0.01 10 0
2 2 200 0 100 -100 0.02 30 0
end
branch
1 2 0.05 0.3 0.02
end
busdc
1 1 1.1 0.9
end
convdc
1 1 1 -100 100 1.1 0.011 0.003 0.004 0.011 0.003 0.007 3 0 1 0.05 0.001 0.5
2 2 1 -100 100 1.1 0.011 0.003 0.004 0.011 0.003 0.007 3 0 1 0.05 0.001 0.5
end
";
