//! The profile and spec files shipped with the repository.

use std::path::{Path, PathBuf};

use lcsim::format::{parse_profile, profile_to_text, read_profile, read_spec};
use lcsim::model::{PlatformConfig, ResourceLimits};

fn files(dir: &str, ext: &str) -> Vec<PathBuf> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(dir);
    let mut v: Vec<PathBuf> = std::fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    v
}

#[test]
fn profiles_parse_and_round_trip() {
    let plat = PlatformConfig::default();
    let all = files("profiles", "profile");
    assert_eq!(all.len(), 9);
    for path in all {
        let p = read_profile(&path, &plat).unwrap();
        assert_eq!(path.file_stem().unwrap().to_str().unwrap(), p.name);
        let again = parse_profile(&profile_to_text(&p), "round-trip", &plat).unwrap();
        assert_eq!(again, p);
    }
}

#[test]
fn specs_parse() {
    let all = files("experiments", "spec");
    assert!(all.len() >= 12);
    for path in all {
        let s = read_spec(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(s.plan.validate().is_ok());
        s.limits().validate(&s.platform).unwrap();
    }
}

#[test]
fn silo_basis_service_time_is_a_fifth_of_its_lqos() {
    let plat = PlatformConfig::default();
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../profiles/silo.profile");
    let p = read_profile(&root, &plat).unwrap();
    let s = p.isolated_service_time(&ResourceLimits::unconstrained(&plat), &plat);
    assert!((s - 0.0001).abs() / 0.0001 < 0.01, "{s}");
}
