//! Key=value run reports. One entry per line, floats rendered with full
//! precision so reruns compare byte-for-byte.

use std::fmt::Write as _;

#[derive(Debug, Clone, Default)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn text(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.push((key.into(), value.into()));
    }

    pub fn float(&mut self, key: impl Into<String>, value: f64) {
        self.entries.push((key.into(), format!("{value:.12e}")));
    }

    pub fn int(&mut self, key: impl Into<String>, value: u64) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn flag(&mut self, key: impl Into<String>, value: bool) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            writeln!(out, "{k}={v}").unwrap();
        }
        out
    }
}

/// Parse the `render` format back into pairs. Lines without `=` are skipped.
pub fn parse_report(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|line| {
            let (k, v) = line.split_once('=')?;
            Some((k.to_string(), v.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_and_parses_back() {
        let mut r = Report::new();
        r.text("model", "seir-ode");
        r.float("lambda0", -0.5);
        r.flag("converged", true);
        let text = r.render();
        assert!(text.contains("model=seir-ode\n"));
        assert!(text.contains("lambda0=-5.000000000000e-1\n"));
        let pairs = parse_report(&text);
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[2], ("converged".to_string(), "true".to_string()));
    }
}
