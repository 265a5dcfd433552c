//! Runs every experiment once at the default budget and reports one line per
//! acceptance criterion. Exits nonzero if any criterion fails.

use std::time::Instant;

use heiskern::cli::execute;
use heiskern::config::ExperimentConfig;
use heiskern::exec::Pool;
use heiskern::report::{Check, Summary};

struct Run {
    summary: Summary,
    seconds: f64,
}

fn run(name: &str, pool: &Pool) -> Run {
    let cfg = ExperimentConfig { experiment: Some(name.to_string()), ..ExperimentConfig::default() };
    let clock = Instant::now();
    let (summary, _) = execute(&cfg, pool).unwrap_or_else(|e| panic!("{name}: {e:#}"));
    Run { summary, seconds: clock.elapsed().as_secs_f64() }
}

fn select(run: &Run, keep: impl Fn(&str) -> bool) -> Vec<&Check> {
    run.summary.checks.iter().filter(|c| keep(&c.name)).collect()
}

struct Criterion {
    id: u32,
    what: &'static str,
    checks: Vec<Check>,
    seconds: f64,
    target: Option<f64>,
}

impl Criterion {
    fn new(id: u32, what: &'static str, checks: Vec<&Check>, seconds: f64, target: Option<f64>) -> Self {
        Criterion { id, what, checks: checks.into_iter().cloned().collect(), seconds, target }
    }

    fn pass(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.pass)
    }

    fn line(&self) -> String {
        let verdict = if self.pass() { "PASS" } else { "FAIL" };
        let ok = self.checks.iter().filter(|c| c.pass).count();
        let time = match self.target {
            Some(t) => format!("{:.0} s, target {t:.0} s", self.seconds),
            None => format!("{:.0} s", self.seconds),
        };
        let mut s = format!("{verdict} {:>2} {}: {ok}/{} checks ({time})", self.id, self.what, self.checks.len());
        for c in self.checks.iter().filter(|c| !c.pass) {
            s.push_str(&format!(
                "\n      failed {}: lhs {} rhs {} gap {} allowed {}",
                c.name, c.lhs, c.rhs, c.gap, c.allowed
            ));
        }
        s
    }
}

fn without_timestamp(s: &Summary) -> String {
    let json = s.to_json();
    json[..json.find("\"timestamp\"").expect("timestamp is present")].to_string()
}

fn main() {
    // `cargo test -- --list` and filters: this target has no named tests.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let pool = Pool::available().expect("thread pool");
    let single = Pool::new(1).expect("thread pool");
    let double = Pool::new(2).expect("thread pool");
    let mut out = Vec::new();

    let yor = run("yor", &single);
    out.push(Criterion::new(1, "Yor identity", select(&yor, |n| n.starts_with("case")), yor.seconds, Some(60.0)));
    let hk = run("heat-kernel", &pool);
    out.push(Criterion::new(
        2,
        "heat-kernel normalisation",
        select(&hk, |n| n.starts_with("j0_mass") || n.starts_with("char_function")),
        hk.seconds,
        Some(60.0),
    ));
    let gamma = run("gamma", &pool);
    out.push(Criterion::new(3, "density oracle", select(&gamma, |_| true), gamma.seconds, Some(300.0)));
    out.push(Criterion::new(4, "Ito moments", select(&yor, |n| n.starts_with("ito.")), yor.seconds, Some(30.0)));
    out.push(Criterion::new(5, "scaling laws", select(&hk, |n| n.starts_with("scaling.")), hk.seconds, Some(60.0)));
    out.push(Criterion::new(
        6,
        "inversion invariance",
        select(&hk, |n| n.starts_with("inversion.")),
        hk.seconds,
        Some(60.0),
    ));
    let qi = run("quasi-invariance", &pool);
    out.push(Criterion::new(7, "quasi-invariance", select(&qi, |n| !n.starts_with("sup.")), qi.seconds, Some(120.0)));
    let ibp = run("ibp", &pool);
    out.push(Criterion::new(
        8,
        "integration by parts",
        select(&ibp, |n| !n.starts_with("order.")),
        ibp.seconds,
        Some(180.0),
    ));
    out.push(Criterion::new(9, "derivative rules", select(&ibp, |n| n.starts_with("order.")), ibp.seconds, Some(30.0)));
    let tails = run("tails", &pool);
    let fernique = run("fernique", &pool);
    let mut tail_checks = select(&tails, |_| true);
    tail_checks.extend(select(&fernique, |_| true));
    out.push(Criterion::new(10, "tails", tail_checks, tails.seconds + fernique.seconds, Some(600.0)));
    let spectral = run("spectral", &pool);
    out.push(Criterion::new(11, "spectral oracle", select(&spectral, |_| true), spectral.seconds, Some(10.0)));

    let again = run("yor", &double);
    let same = without_timestamp(&yor.summary) == without_timestamp(&again.summary);
    let determinism = Check::flag("yor.threads_1_vs_2_identical", same);
    out.push(Criterion::new(12, "determinism across threads", vec![&determinism], again.seconds, None));

    println!();
    for c in &out {
        println!("{}", c.line());
    }
    let failed = out.iter().filter(|c| !c.pass()).count();
    println!("\nacceptance: {} of {} criteria passed", out.len() - failed, out.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
