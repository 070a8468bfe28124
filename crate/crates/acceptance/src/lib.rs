//! Runner for the acceptance suite: every criterion produces a verdict and
//! is reported on one line, whether it passed, failed or panicked.

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

pub struct Criterion {
    pub id: u32,
    pub name: &'static str,
    /// Wall-time budget; exceeding it fails the criterion.
    pub budget: Option<Duration>,
    pub run: fn() -> Verdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: u32,
    pub pass: bool,
    pub line: String,
}

fn panic_message(e: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = e.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = e.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".into()
    }
}

pub fn run_one(c: &Criterion) -> Outcome {
    let start = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(c.run));
    let took = start.elapsed();
    let mut v = match result {
        Ok(v) => v,
        Err(e) => Verdict::new(false, format!("panicked: {}", panic_message(&*e))),
    };
    if let Some(b) = c.budget {
        if took > b {
            v.pass = false;
            v.detail.push_str(&format!("; over the {:.0} s budget", b.as_secs_f64()));
        }
    }
    let status = if v.pass { "PASS" } else { "FAIL" };
    Outcome {
        id: c.id,
        pass: v.pass,
        line: format!(
            "criterion {:>2} {status} {} ({:.1} s): {}",
            c.id,
            c.name,
            took.as_secs_f64(),
            v.detail
        ),
    }
}

/// Runs the criteria whose id or name matches one of `filters` (all when
/// empty), printing a line as each finishes. Returns true when all passed.
pub fn run_all(criteria: &[Criterion], filters: &[String]) -> bool {
    let selected: Vec<&Criterion> = criteria
        .iter()
        .filter(|c| {
            filters.is_empty()
                || filters
                    .iter()
                    .any(|f| c.name.contains(f.as_str()) || c.id.to_string() == *f)
        })
        .collect();
    let mut all = true;
    for c in selected {
        let o = run_one(c);
        println!("{}", o.line);
        all &= o.pass;
    }
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_and_budgets_fail() {
        let boom = Criterion {
            id: 1,
            name: "boom",
            budget: None,
            run: || panic!("bad"),
        };
        let o = run_one(&boom);
        assert!(!o.pass && o.line.contains("panicked: bad"));
        let slow = Criterion {
            id: 2,
            name: "slow",
            budget: Some(Duration::ZERO),
            run: || {
                std::thread::sleep(Duration::from_millis(2));
                Verdict::new(true, "ok")
            },
        };
        assert!(!run_one(&slow).pass);
    }
}
