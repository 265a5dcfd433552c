//! Every experiment in turn, each reading `params.<name>`.

use serde_json::Value;

use super::{Context, EXPERIMENTS};
use crate::report::Outcome;

pub fn defaults() -> Value {
    Value::Object(Default::default())
}

pub fn run(ctx: &Context) -> anyhow::Result<Outcome> {
    if let Value::Object(m) = &ctx.params {
        if let Some(k) = m.keys().find(|k| !EXPERIMENTS.iter().any(|e| e.name == k.as_str() && e.name != "all")) {
            anyhow::bail!("params.{k} does not name an experiment");
        }
    }
    let mut out = Outcome::new(&ctx.params);
    for e in EXPERIMENTS.iter().filter(|e| e.name != "all") {
        // The density comparison is specific to the Heisenberg form.
        if e.name == "gamma" && ctx.form != heiskern_core::group::SkewForm::h3() {
            out.result("gamma_skipped", "form is not the Heisenberg form");
            continue;
        }
        let sub = Context {
            exec: ctx.exec,
            form: ctx.form.clone(),
            horizon: ctx.horizon,
            mc: ctx.mc,
            tol: ctx.tol,
            params: match &ctx.params {
                Value::Object(m) => m.get(e.name).cloned().unwrap_or(Value::Null),
                _ => Value::Null,
            },
        };
        out.absorb(e.name, (e.run)(&sub)?);
    }
    Ok(out)
}
