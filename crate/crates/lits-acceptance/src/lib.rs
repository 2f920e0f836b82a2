//! Pass/fail bookkeeping for the acceptance run in `tests/acceptance.rs`.
//!
//! Lives in its own package so that cargo runs it after every test target
//! of `lits`: a failing criterion makes the target exit nonzero, which
//! would otherwise stop the remaining targets.

use std::time::Duration;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: u8,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "{} criterion {:>2} {}: {} [{:.1} s]",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

#[derive(Debug, Default)]
pub struct Scoreboard {
    pub outcomes: Vec<Outcome>,
}

impl Scoreboard {
    /// Records and prints one criterion.
    pub fn record(&mut self, o: Outcome) {
        println!("{}", o.line());
        self.outcomes.push(o);
    }

    pub fn failed(&self) -> Vec<u8> {
        self.outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect()
    }

    pub fn summary(&self) -> String {
        let failed = self.failed();
        let mut s = format!("{}/{} criteria passed", self.outcomes.len() - failed.len(), self.outcomes.len());
        if !failed.is_empty() {
            let ids: Vec<String> = failed.iter().map(u8::to_string).collect();
            s += &format!("; failed: {}", ids.join(", "));
        }
        s
    }

    pub fn exit_code(&self) -> i32 {
        i32::from(!self.failed().is_empty())
    }
}
