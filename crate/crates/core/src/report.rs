//! Final-report markers and their parser.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportKind {
    NeuronDescription,
    SpuriousClassification,
    BiasIdentification,
}

impl ReportKind {
    pub fn template_id(self) -> &'static str {
        match self {
            ReportKind::NeuronDescription => "neuron-description",
            ReportKind::SpuriousClassification => "spurious-classification",
            ReportKind::BiasIdentification => "bias-identification",
        }
    }

    pub fn from_template_id(id: &str) -> Option<Self> {
        match id {
            "neuron-description" => Some(ReportKind::NeuronDescription),
            "spurious-classification" => Some(ReportKind::SpuriousClassification),
            "bias-identification" => Some(ReportKind::BiasIdentification),
            _ => None,
        }
    }

    /// Name of the experiment function programs must define.
    pub fn entry_point(self) -> &'static str {
        match self {
            ReportKind::NeuronDescription => "run_experiment",
            _ => "execute_command",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Selective,
    Spurious,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Selective => "SELECTIVE",
            Verdict::Spurious => "SPURIOUS",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalReport {
    pub kind: ReportKind,
    pub description: String,
    pub labels: Vec<String>,
    pub verdict: Option<Verdict>,
    pub bias_text: Option<String>,
    pub parse_ok: bool,
    pub rounds_used: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl FinalReport {
    pub fn unparsed(kind: ReportKind, rounds_used: u32, diagnostic: &str) -> Self {
        Self {
            kind,
            description: String::new(),
            labels: Vec::new(),
            verdict: None,
            bias_text: None,
            parse_ok: false,
            rounds_used,
            diagnostics: alloc::vec![diagnostic.to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tag {
    Description,
    Label,
    Reasoning,
    Bias,
}

/// Splits `[TAG]: value` / `[LABEL 2]: value` off the start of a line.
fn marker(line: &str) -> Option<(Tag, &str)> {
    let rest = line.trim_start().strip_prefix('[')?;
    let close = rest.find("]:")?;
    let (tag, value) = (&rest[..close], &rest[close + 2..]);
    let tag = match tag.trim() {
        "DESCRIPTION" => Tag::Description,
        "REASONING" => Tag::Reasoning,
        "BIAS" => Tag::Bias,
        "LABEL" => Tag::Label,
        t => {
            let n = t.strip_prefix("LABEL ")?;
            if n.is_empty() || !n.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            Tag::Label
        }
    };
    Some((tag, value.trim()))
}

fn collect(message: &str) -> Vec<(Tag, String)> {
    let mut out: Vec<(Tag, String)> = Vec::new();
    let mut open = false;
    for line in message.lines() {
        if let Some((tag, value)) = marker(line) {
            out.push((tag, value.to_string()));
            open = true;
        } else if line.trim().is_empty() {
            open = false;
        } else if open {
            let last = out.last_mut().expect("open implies an entry");
            if !last.1.is_empty() {
                last.1.push(' ');
            }
            last.1.push_str(line.trim());
        }
    }
    out
}

/// Whether the message carries the template's final-answer marker.
pub fn has_final_markers(message: &str, kind: ReportKind) -> bool {
    let tags = collect(message);
    let has = |t: Tag| tags.iter().any(|(x, _)| *x == t);
    match kind {
        ReportKind::NeuronDescription => has(Tag::Description) || has(Tag::Label),
        ReportKind::SpuriousClassification => has(Tag::Label),
        ReportKind::BiasIdentification => has(Tag::Bias),
    }
}

fn parse_verdict(value: &str) -> Option<Verdict> {
    let upper = value.to_uppercase();
    let sel = upper.contains("SELECTIVE");
    let spu = upper.contains("SPURIOUS");
    match (sel, spu) {
        (true, false) => Some(Verdict::Selective),
        (false, true) => Some(Verdict::Spurious),
        _ => None,
    }
}

/// Extracts the template's markers. Never fails: problems are reported via
/// `parse_ok = false` and `diagnostics`.
pub fn parse_final(message: &str, kind: ReportKind) -> FinalReport {
    let tags = collect(message);
    let values = |t: Tag| -> Vec<String> {
        tags.iter()
            .filter(|(x, _)| *x == t)
            .map(|(_, v)| v.clone())
            .collect()
    };
    let mut report = FinalReport {
        kind,
        description: String::new(),
        labels: Vec::new(),
        verdict: None,
        bias_text: None,
        parse_ok: true,
        rounds_used: 0,
        diagnostics: Vec::new(),
    };
    let exactly_one = |name: &str, vals: Vec<String>, report: &mut FinalReport| {
        match vals.len() {
            1 if !vals[0].is_empty() => Some(vals.into_iter().next().unwrap()),
            1 => {
                report.parse_ok = false;
                report.diagnostics.push(format!("[{name}] is empty"));
                None
            }
            0 => {
                report.parse_ok = false;
                report.diagnostics.push(format!("missing [{name}]"));
                None
            }
            n => {
                report.parse_ok = false;
                report.diagnostics.push(format!("[{name}] appears {n} times"));
                None
            }
        }
    };
    match kind {
        ReportKind::NeuronDescription => {
            if let Some(d) = exactly_one("DESCRIPTION", values(Tag::Description), &mut report) {
                report.description = d;
            }
            let labels: Vec<String> = values(Tag::Label)
                .into_iter()
                .filter(|l| !l.is_empty())
                .collect();
            if labels.is_empty() {
                report.parse_ok = false;
                report.diagnostics.push("missing [LABEL]".into());
            }
            report.labels = labels;
        }
        ReportKind::SpuriousClassification => {
            if let Some(r) = exactly_one("REASONING", values(Tag::Reasoning), &mut report) {
                report.description = r;
            }
            if let Some(l) = exactly_one("LABEL", values(Tag::Label), &mut report) {
                report.verdict = parse_verdict(&l);
                if report.verdict.is_none() {
                    report.parse_ok = false;
                    report
                        .diagnostics
                        .push(format!("[LABEL] `{l}` is neither SELECTIVE nor SPURIOUS"));
                }
                report.labels.push(l);
            }
        }
        ReportKind::BiasIdentification => {
            report.bias_text = exactly_one("BIAS", values(Tag::Bias), &mut report);
        }
    }
    report
}

/// Formats a report with the markers `parse_final` reads.
pub fn render_report(report: &FinalReport) -> String {
    match report.kind {
        ReportKind::NeuronDescription => {
            let mut out = format!("[DESCRIPTION]: {}\n", report.description);
            if report.labels.len() == 1 {
                out.push_str(&format!("[LABEL]: {}\n", report.labels[0]));
            } else {
                for (i, l) in report.labels.iter().enumerate() {
                    out.push_str(&format!("[LABEL {}]: {}\n", i + 1, l));
                }
            }
            out
        }
        ReportKind::SpuriousClassification => format!(
            "[REASONING]: {}\n[LABEL]: {}\n",
            report.description,
            report.verdict.map_or("", Verdict::as_str)
        ),
        ReportKind::BiasIdentification => {
            format!("[BIAS]: {}\n", report.bias_text.as_deref().unwrap_or(""))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn description_with_one_label() {
        let r = parse_final(
            "[DESCRIPTION]: stripes on fabric\n[LABEL]: striped patterns",
            ReportKind::NeuronDescription,
        );
        assert!(r.parse_ok);
        assert_eq!(r.description, "stripes on fabric");
        assert_eq!(r.labels, ["striped patterns"]);
    }

    #[test]
    fn numbered_labels_in_order() {
        let msg = "thinking...\n[DESCRIPTION]: trains OR instruments\n[LABEL 1]: trains\n[LABEL 2]: instruments\n";
        let r = parse_final(msg, ReportKind::NeuronDescription);
        assert!(r.parse_ok);
        assert_eq!(r.labels, ["trains", "instruments"]);
    }

    #[test]
    fn spurious_verdict() {
        let r = parse_final(
            "[REASONING]: fires for two breeds\n[LABEL]: SPURIOUS",
            ReportKind::SpuriousClassification,
        );
        assert!(r.parse_ok);
        assert_eq!(r.verdict, Some(Verdict::Spurious));
    }

    #[test]
    fn bias_text() {
        let r = parse_final(
            "[BIAS]: flutes are scored lower without a hand",
            ReportKind::BiasIdentification,
        );
        assert!(r.parse_ok);
        assert_eq!(r.bias_text.as_deref(), Some("flutes are scored lower without a hand"));
    }

    #[test]
    fn missing_and_duplicate_markers() {
        let r = parse_final("no markers at all", ReportKind::NeuronDescription);
        assert!(!r.parse_ok);
        assert_eq!(r.diagnostics.len(), 2);
        let r = parse_final(
            "[DESCRIPTION]: a\n[DESCRIPTION]: b\n[LABEL]: c",
            ReportKind::NeuronDescription,
        );
        assert!(!r.parse_ok);
        let r = parse_final(
            "[REASONING]: x\n[LABEL]: maybe",
            ReportKind::SpuriousClassification,
        );
        assert!(!r.parse_ok);
        assert_eq!(r.verdict, None);
    }

    #[test]
    fn continuation_lines_join() {
        let r = parse_final(
            "[DESCRIPTION]: dogs\nrunning on grass\n\nunrelated\n[LABEL]: dogs",
            ReportKind::NeuronDescription,
        );
        assert_eq!(r.description, "dogs running on grass");
    }

    #[test]
    fn final_marker_detection() {
        assert!(has_final_markers("[BIAS]: x", ReportKind::BiasIdentification));
        assert!(!has_final_markers("[HYPOTHESIS LIST]: x", ReportKind::NeuronDescription));
        assert!(!has_final_markers("[REASONING]: x", ReportKind::SpuriousClassification));
    }
}
