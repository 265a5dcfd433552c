use heiskern::config::{ExperimentConfig, FormSpec, Overrides, Tolerance};
use heiskern::formats::{num, path_table, SkewFormJson, Table};
use heiskern_core::group::SkewForm;
use heiskern_core::path::{sample_bm, TimeGrid};
use heiskern_core::rng::RngStream;

#[test]
fn skew_forms_round_trip() {
    for form in [SkewForm::h3(), SkewForm::block_diagonal(&[1.0, 0.25]), SkewForm::free_step_two(4)] {
        let json = serde_json::to_string(&SkewFormJson::from(&form)).unwrap();
        let back: SkewFormJson = serde_json::from_str(&json).unwrap();
        let again = back.to_form().unwrap();
        assert_eq!(again.dim_w(), form.dim_w());
        assert_eq!(again.omegas(), form.omegas());
    }
}

#[test]
fn form_files_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("form.json");
    std::fs::write(&path, r#"{"dim_w": 2, "omegas": [[0, 2, -2, 0]]}"#).unwrap();
    let form = FormSpec::File { path }.build().unwrap();
    assert_eq!(form, SkewForm::block_diagonal(&[2.0]));
    std::fs::write(dir.path().join("bad.json"), r#"{"dim_w": 2, "dim_c": 2, "omegas": [[0, 2, -2, 0]]}"#).unwrap();
    assert!(SkewFormJson::load(&dir.path().join("bad.json")).is_err());
}

#[test]
fn numbers_round_trip_through_csv() {
    let p = sample_bm(TimeGrid::new(0.5, 16).unwrap(), 3, RngStream::new(3, 0));
    let mut buf = Vec::new();
    path_table(&p).write(&mut buf).unwrap();
    let mut r = csv::Reader::from_reader(buf.as_slice());
    assert_eq!(r.headers().unwrap(), vec!["t", "x1", "x2", "x3"]);
    for (k, row) in r.records().enumerate() {
        let row = row.unwrap();
        let vals: Vec<f64> = row.iter().map(|s| s.parse().unwrap()).collect();
        assert_eq!(vals[0], p.grid().time(k));
        assert_eq!(&vals[1..], p.row(k));
    }
    assert_eq!(num(f64::NAN), "NaN");
    assert_eq!(num(f64::INFINITY), "inf");
    let mut t = Table::new(["a"]);
    t.push(vec!["x,y".into()]);
    let mut buf = Vec::new();
    t.write(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "a\n\"x,y\"\n");
}

#[test]
fn configs_round_trip_and_hash_ignores_output() {
    let text = r#"{"experiment": "ibp", "form": {"kind": "blocks", "weights": [1, 0.5]}, "horizon": 2,
        "mc": {"n_paths": 100, "n_steps": 16, "seed": 4}, "params": {"ladder": [0.1, 0.05]},
        "tolerance": {"k_sigma": 4}}"#;
    let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
    assert_eq!(cfg.tolerance, Tolerance { k_sigma: 4.0, ..Tolerance::default() });
    let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
    let mut moved = cfg.clone();
    moved.apply(&Overrides { out: Some("elsewhere".into()), ..Overrides::default() });
    assert_eq!(moved.hash(), cfg.hash());
    moved.apply(&Overrides { seed: Some(5), ..Overrides::default() });
    assert_ne!(moved.hash(), cfg.hash());
    assert!(serde_json::from_str::<ExperimentConfig>(r#"{"mc": {"paths": 3}}"#).is_err());
}
