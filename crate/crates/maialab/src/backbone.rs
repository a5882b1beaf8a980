//! Backbones produce the agent's side of a session. The built-in ones are
//! scripted playbooks: deterministic experiment plans that read the same
//! prompts and observations a language model would.

use std::fmt::Write as _;
use std::sync::Arc;

use maialab_core::report::ReportKind;
use maialab_core::ConceptVocabulary;
use serde_json::Value;

use crate::prompts::TemplateError;
use crate::transcript::{Message, Role};

/// Observations end with this line followed by the program's JSON result.
pub const RETURN_MARKER: &str = "Return value:\n";

/// Prompts per generation call inside playbook programs.
const CHUNK: usize = 16;

/// Fraction of the exemplar floor a generated image must reach to count.
const FIRE_FRACTION: f64 = 0.5;

/// Minimum probability gain over the bare class that counts as a bias.
const BIAS_GAIN: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("BackboneError: {0}")]
pub struct BackboneError(pub String);

pub trait Backbone: Send {
    fn name(&self) -> &str;
    fn send(&mut self, messages: &[Message]) -> Result<String, BackboneError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Playbook {
    DescribeDefault,
    SpuriousDefault,
    BiasDefault,
}

impl Playbook {
    pub const NAMES: [&'static str; 3] = ["describe-default", "spurious-default", "bias-default"];

    pub fn for_kind(kind: ReportKind) -> Self {
        match kind {
            ReportKind::NeuronDescription => Self::DescribeDefault,
            ReportKind::SpuriousClassification => Self::SpuriousDefault,
            ReportKind::BiasIdentification => Self::BiasDefault,
        }
    }

    /// `scripted` picks the playbook matching the task.
    pub fn resolve(name: &str, kind: ReportKind) -> Result<Self, TemplateError> {
        match name {
            "scripted" => Ok(Self::for_kind(kind)),
            "describe-default" => Ok(Self::DescribeDefault),
            "spurious-default" => Ok(Self::SpuriousDefault),
            "bias-default" => Ok(Self::BiasDefault),
            other => Err(TemplateError::UnknownPlaybook(other.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::DescribeDefault => Self::NAMES[0],
            Self::SpuriousDefault => Self::NAMES[1],
            Self::BiasDefault => Self::NAMES[2],
        }
    }
}

pub struct ScriptedBackbone {
    playbook: Playbook,
    vocab: Arc<ConceptVocabulary>,
}

impl ScriptedBackbone {
    pub fn new(playbook: Playbook, vocab: Arc<ConceptVocabulary>) -> Self {
        Self { playbook, vocab }
    }
}

impl Backbone for ScriptedBackbone {
    fn name(&self) -> &str {
        self.playbook.as_str()
    }

    fn send(&mut self, messages: &[Message]) -> Result<String, BackboneError> {
        let view = View::new(messages)?;
        Ok(match self.playbook {
            Playbook::DescribeDefault => describe_step(&self.vocab, &view),
            Playbook::SpuriousDefault => spurious_step(&self.vocab, &view),
            Playbook::BiasDefault => bias_step(&self.vocab, &view),
        })
    }
}

/// What a playbook reads from the conversation so far.
struct View<'a> {
    system: &'a str,
    user: &'a str,
    /// Parsed return values of every observation, oldest first.
    results: Vec<Option<Value>>,
    /// True when the latest user turn asks for the final answer only.
    must_answer: bool,
}

impl<'a> View<'a> {
    fn new(messages: &'a [Message]) -> Result<Self, BackboneError> {
        let find = |role| messages.iter().find(|m| m.role == role).map(|m| m.text.as_str());
        let system = find(Role::System).ok_or_else(|| BackboneError("no system prompt".into()))?;
        let user = find(Role::User).ok_or_else(|| BackboneError("no task prompt".into()))?;
        let results = messages
            .iter()
            .filter(|m| m.role == Role::Observation)
            .map(|m| return_value(&m.text))
            .collect();
        let must_answer = messages.len() > 2
            && messages.last().is_some_and(|m| m.role == Role::User);
        Ok(Self {
            system,
            user,
            results,
            must_answer,
        })
    }

    fn enabled(&self, tool: &str) -> bool {
        let head = format!("tools.{tool}(");
        self.system.lines().any(|l| l.starts_with(&head))
    }

    fn stage(&self, name: &str) -> Option<&Value> {
        self.results
            .iter()
            .flatten()
            .rev()
            .find(|v| v.get("stage").and_then(Value::as_str) == Some(name))
    }

    /// Entry point named in the task's code skeleton.
    fn entry(&self) -> &'static str {
        if self.user.contains("fn execute_command(") {
            "execute_command"
        } else {
            "run_experiment"
        }
    }

    /// Value after `Key:` on a line of the task prompt.
    fn field(&self, key: &str) -> Option<&'a str> {
        self.user
            .lines()
            .find_map(|l| l.strip_prefix(key))
            .map(str::trim)
    }
}

fn return_value(observation: &str) -> Option<Value> {
    let at = observation.rfind(RETURN_MARKER)?;
    serde_json::from_str(observation[at + RETURN_MARKER.len()..].trim()).ok()
}

fn program(plan: &str, entry: &str, body: &str) -> String {
    format!("{plan}\n\n```rhai\nfn {entry}(system, tools) {{\n{body}}}\n```\n")
}

fn rhai_list<'s>(items: impl IntoIterator<Item = &'s str>) -> String {
    let quoted: Vec<String> = items.into_iter().map(|s| format!("{s:?}")).collect();
    format!("[{}]", quoted.join(", "))
}

fn strings(v: Option<&Value>) -> Vec<String> {
    v.and_then(Value::as_array)
        .map(|a| a.iter().filter_map(|s| s.as_str().map(str::to_string)).collect())
        .unwrap_or_default()
}

fn numbers(v: Option<&Value>) -> Vec<f64> {
    v.and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_f64).collect())
        .unwrap_or_default()
}

// ---------------------------------------------------------------- describe

struct ExemplarFindings {
    floor: f64,
    evidence: Vec<String>,
    context: Vec<String>,
    /// Concepts named in the exemplar captions, most frequent first.
    frequent: Vec<(String, usize)>,
}

fn exemplar_findings(vocab: &ConceptVocabulary, v: &Value) -> ExemplarFindings {
    let acts = numbers(v.get("activations"));
    let floor = acts.iter().copied().fold(f64::INFINITY, f64::min);
    let summary = v.get("summary").and_then(Value::as_str).unwrap_or("");
    let (shared, context) = match summary.find("(context:") {
        Some(i) => (&summary[..i], &summary[i..]),
        None => (summary, ""),
    };
    let evidence = vocab.concepts_in(shared);
    let context = vocab
        .concepts_in(context)
        .into_iter()
        .filter(|c| !evidence.contains(c))
        .collect();
    let mut counts: Vec<(String, usize)> = Vec::new();
    for line in v.get("captions").and_then(Value::as_str).unwrap_or("").lines() {
        let caption = line.split_once(':').map_or(line, |(_, d)| d);
        for c in vocab.concepts_in(caption) {
            match counts.iter_mut().find(|(k, _)| *k == c) {
                Some((_, n)) => *n += 1,
                None => counts.push((c, 1)),
            }
        }
    }
    counts.sort_by(|a, b| b.1.cmp(&a.1));
    ExemplarFindings {
        floor: if floor.is_finite() { floor } else { 0.0 },
        evidence,
        context,
        frequent: counts,
    }
}

fn describe_final(description: &str, labels: &[String]) -> String {
    let mut out = format!("[DESCRIPTION]: {description}\n");
    if labels.len() == 1 {
        let _ = writeln!(out, "[LABEL]: {}", labels[0]);
    } else {
        for (i, l) in labels.iter().enumerate() {
            let _ = writeln!(out, "[LABEL {}]: {l}", i + 1);
        }
    }
    out
}

fn conditional_final(a: &str, b: &str) -> String {
    describe_final(
        &format!("Fires on {a}, but only in images that also contain {b}; {a} alone stays silent."),
        &[format!("{a} (only when {b} is present)")],
    )
}

fn describe_step(vocab: &ConceptVocabulary, view: &View) -> String {
    let exemplars_on = view.enabled("dataset_exemplars");
    let generation_on = view.enabled("text2image");
    let describe_on = view.enabled("describe_images");
    let summarize_on = view.enabled("summarize_images");
    let log_on = view.enabled("log_experiment");
    let entry = view.entry();
    let findings = view.stage("exemplars").map(|v| exemplar_findings(vocab, v));

    if view.results.is_empty() && !view.must_answer {
        if exemplars_on {
            return program(
                "Start with the dataset images that drive the unit hardest.",
                entry,
                &exemplar_body(describe_on, summarize_on, log_on),
            );
        }
        if generation_on {
            return singles_program(vocab, entry, 0.0, log_on);
        }
    }

    if let Some(singles) = view.stage("singles") {
        let fired = strings(singles.get("fired"));
        if !fired.is_empty() {
            let description = if fired.len() == 1 {
                format!("Responds to images containing {}.", fired[0])
            } else {
                format!("Responds to each of several unrelated things: {}.", fired.join(", "))
            };
            return describe_final(&description, &fired);
        }
        if let Some(pairs) = view.stage("pairs") {
            return pairs_verdict(vocab, pairs, findings.as_ref());
        }
        if !view.must_answer {
            let threshold = singles.get("threshold").and_then(Value::as_f64).unwrap_or(0.5);
            return pairs_program(vocab, entry, findings.as_ref(), threshold, describe_on);
        }
    } else if generation_on && !view.must_answer {
        if let Some(f) = &findings {
            return singles_program(vocab, entry, FIRE_FRACTION * f.floor, log_on);
        }
    }

    match findings {
        Some(f) => exemplar_only_final(&f),
        None => describe_final(
            "The experiments did not reveal a consistent trigger.",
            &["unclear".to_string()],
        ),
    }
}

fn exemplar_body(describe: bool, summarize: bool, log: bool) -> String {
    let mut b = String::from(
        "    let ex = tools.dataset_exemplars(system);\n\
         \x20   let acts = ex[0];\n\
         \x20   let imgs = ex[1];\n\
         \x20   let titles = [];\n\
         \x20   for i in 0..imgs.len() { titles.push(\"exemplar \" + (i + 1)); }\n",
    );
    b.push_str(if describe {
        "    let captions = tools.describe_images(imgs, titles);\n"
    } else {
        "    let captions = \"\";\n"
    });
    b.push_str(if summarize {
        "    let summary = tools.summarize_images(imgs);\n"
    } else {
        "    let summary = \"\";\n"
    });
    if log {
        b.push_str("    tools.log_experiment(acts, imgs, titles, \"dataset exemplars\");\n");
    }
    b.push_str(
        "    #{ stage: \"exemplars\", activations: acts, summary: summary, captions: captions }\n",
    );
    b
}

fn singles_program(vocab: &ConceptVocabulary, entry: &str, threshold: f64, log: bool) -> String {
    let concepts = rhai_list(vocab.canonical_tokens());
    let log_line = if log {
        "    if kept.len() > 0 { tools.log_experiment(kept_acts, kept, fired, \"single concepts that fire\"); }\n"
    } else {
        ""
    };
    let body = format!(
        "    let concepts = {concepts};\n\
         \x20   let threshold = {threshold:.4};\n\
         \x20   let fired = [];\n\
         \x20   let kept = [];\n\
         \x20   let kept_acts = [];\n\
         \x20   let i = 0;\n\
         \x20   while i < concepts.len() {{\n\
         \x20       let chunk = concepts.extract(i, {CHUNK});\n\
         \x20       let prompts = chunk.map(|c| \"a photo of \" + c);\n\
         \x20       let r = system.neuron(tools.text2image(prompts));\n\
         \x20       for j in 0..chunk.len() {{\n\
         \x20           let a = r[0][j];\n\
         \x20           if a > 0.0 && a >= threshold {{\n\
         \x20               fired.push(chunk[j]);\n\
         \x20               kept.push(r[1][j]);\n\
         \x20               kept_acts.push(a);\n\
         \x20           }}\n\
         \x20       }}\n\
         \x20       i += {CHUNK};\n\
         \x20   }}\n\
         {log_line}\
         \x20   #{{ stage: \"singles\", threshold: threshold, fired: fired }}\n"
    );
    program(
        "Check every concept on its own to see which ones drive the unit.",
        entry,
        &body,
    )
}

fn pairs_program(
    vocab: &ConceptVocabulary,
    entry: &str,
    findings: Option<&ExemplarFindings>,
    threshold: f64,
    describe: bool,
) -> String {
    let all: Vec<&str> = vocab.canonical_tokens().collect();
    // Candidates from the exemplars when they name anything; otherwise every
    // unordered pair of the vocabulary.
    let (left, right): (Vec<&str>, Vec<&str>) = match findings {
        Some(f) if !f.evidence.is_empty() || !f.frequent.is_empty() => {
            let mut left: Vec<&str> = f.evidence.iter().map(String::as_str).collect();
            for (c, _) in &f.frequent {
                if !left.contains(&c.as_str()) {
                    left.push(c);
                }
            }
            let mut right = left.clone();
            for c in &f.context {
                if !right.contains(&c.as_str()) {
                    right.push(c);
                }
            }
            (left, right)
        }
        _ => (all.clone(), all.clone()),
    };
    let symmetric = left == right;
    let evidence_line = if describe {
        "                evidence.push(tools.describe_images([r[1][j]], [prompts[j]]));\n"
    } else {
        ""
    };
    let body = format!(
        "    let left = {};\n\
         \x20   let right = {};\n\
         \x20   let threshold = {threshold:.4};\n\
         \x20   let pairs = [];\n\
         \x20   for a in 0..left.len() {{\n\
         \x20       for b in 0..right.len() {{\n\
         \x20           if left[a] != right[b] && ({} || b > a) {{ pairs.push([left[a], right[b]]); }}\n\
         \x20       }}\n\
         \x20   }}\n\
         \x20   let hits = [];\n\
         \x20   let evidence = [];\n\
         \x20   let i = 0;\n\
         \x20   while i < pairs.len() {{\n\
         \x20       let chunk = pairs.extract(i, {CHUNK});\n\
         \x20       let prompts = chunk.map(|p| \"a photo of \" + p[0] + \" and \" + p[1]);\n\
         \x20       let r = system.neuron(tools.text2image(prompts));\n\
         \x20       for j in 0..chunk.len() {{\n\
         \x20           let a = r[0][j];\n\
         \x20           if a > 0.0 && a >= threshold {{\n\
         \x20               hits.push(chunk[j]);\n\
         {evidence_line}\
         \x20           }}\n\
         \x20       }}\n\
         \x20       i += {CHUNK};\n\
         \x20   }}\n\
         \x20   #{{ stage: \"pairs\", hits: hits, evidence: evidence }}\n",
        rhai_list(left.iter().copied()),
        rhai_list(right.iter().copied()),
        if symmetric { "false" } else { "true" },
    );
    program(
        "No single concept is enough. Try concepts in combination.",
        entry,
        &body,
    )
}

fn pairs_verdict(
    vocab: &ConceptVocabulary,
    pairs: &Value,
    findings: Option<&ExemplarFindings>,
) -> String {
    let hits: Vec<Vec<String>> = pairs
        .get("hits")
        .and_then(Value::as_array)
        .map(|a| a.iter().map(|p| strings(Some(p))).collect())
        .unwrap_or_default();
    let evidence = strings(pairs.get("evidence"));
    let Some(first) = hits.iter().find(|p| p.len() == 2) else {
        return describe_final(
            "Neither single concepts nor pairs of them drive the unit reliably.",
            &["unclear".to_string()],
        );
    };
    let (x, y) = (&first[0], &first[1]);
    // The masked caption shows which of the two carries the response.
    let seen: Vec<String> = evidence
        .first()
        .map(|line| {
            let caption = line.split_once(':').map_or(line.as_str(), |(_, d)| d);
            vocab.concepts_in(caption)
        })
        .unwrap_or_default();
    let in_caption = |c: &String| seen.contains(c);
    let in_evidence = |c: &String| findings.is_some_and(|f| f.evidence.contains(c));
    let a_is_x = match (in_caption(x), in_caption(y)) {
        (true, false) => true,
        (false, true) => false,
        _ => in_evidence(x) || !in_evidence(y),
    };
    if a_is_x {
        conditional_final(x, y)
    } else {
        conditional_final(y, x)
    }
}

fn exemplar_only_final(f: &ExemplarFindings) -> String {
    if let Some(a) = f.evidence.first() {
        if let Some(b) = f.context.first() {
            return conditional_final(a, b);
        }
        return describe_final(
            &format!("The strongest dataset images share {}.", f.evidence.join(", ")),
            &f.evidence.clone(),
        );
    }
    let common: Vec<String> = f
        .frequent
        .iter()
        .filter(|(_, n)| *n >= 3)
        .take(2)
        .map(|(c, _)| c.clone())
        .collect();
    if common.is_empty() {
        return describe_final(
            "The strongest dataset images have nothing obvious in common.",
            &["unclear".to_string()],
        );
    }
    describe_final(
        &format!("The strongest dataset images mostly show {}.", common.join(" or ")),
        &common,
    )
}

// ---------------------------------------------------------------- spurious

fn split_list(s: Option<&str>) -> Vec<String> {
    s.map(|s| {
        s.split(',')
            .map(|p| p.trim().to_string())
            .filter(|p| !p.is_empty())
            .collect()
    })
    .unwrap_or_default()
}

fn spurious_step(vocab: &ConceptVocabulary, view: &View) -> String {
    let classes = split_list(view.field("Classes:"));
    let envs = split_list(view.field("Backgrounds:"));
    let entry = view.entry();
    if let Some(grid) = view.stage("grid") {
        return spurious_verdict(vocab, &classes, grid);
    }
    if !view.enabled("text2image") || classes.is_empty() || view.must_answer {
        return spurious_final(
            "Could not test the unit on controlled images, so a single-class \
             dependence is unconfirmed.",
            "SPURIOUS",
        );
    }
    let body = format!(
        "    let classes = {};\n\
         \x20   let envs = {};\n\
         \x20   let prompts = [];\n\
         \x20   for c in classes {{\n\
         \x20       prompts.push(\"a \" + c);\n\
         \x20       for e in envs {{ prompts.push(\"a \" + c + \" in the \" + e); }}\n\
         \x20   }}\n\
         \x20   for e in envs {{ prompts.push(\"a view of the \" + e); }}\n\
         \x20   let acts = [];\n\
         \x20   let i = 0;\n\
         \x20   while i < prompts.len() {{\n\
         \x20       let r = system.neuron(tools.text2image(prompts.extract(i, {CHUNK})));\n\
         \x20       acts += r[0];\n\
         \x20       i += {CHUNK};\n\
         \x20   }}\n\
         \x20   #{{ stage: \"grid\", prompts: prompts, activations: acts }}\n",
        rhai_list(classes.iter().map(String::as_str)),
        rhai_list(envs.iter().map(String::as_str)),
    );
    program(
        "Cross every class with every background, and add each alone.",
        entry,
        &body,
    )
}

fn spurious_final(reasoning: &str, label: &str) -> String {
    format!("[REASONING]: {reasoning}\n[LABEL]: {label}\n")
}

fn spurious_verdict(vocab: &ConceptVocabulary, classes: &[String], grid: &Value) -> String {
    let prompts = strings(grid.get("prompts"));
    let acts = numbers(grid.get("activations"));
    if prompts.len() != acts.len() || prompts.is_empty() {
        return spurious_final("The probe grid came back incomplete.", "SPURIOUS");
    }
    let fired: Vec<bool> = acts.iter().map(|a| *a > 0.0).collect();
    if !fired.iter().any(|f| *f) {
        return spurious_final(
            "The unit stayed silent on every class and background tested.",
            "SPURIOUS",
        );
    }
    let mentions: Vec<Vec<String>> = prompts.iter().map(|p| vocab.concepts_in(p)).collect();
    for class in classes {
        let Some(c) = vocab.normalize_phrase(class) else { continue };
        if mentions
            .iter()
            .zip(&fired)
            .all(|(m, f)| m.iter().any(|x| x == c) == *f)
        {
            return spurious_final(
                &format!(
                    "The unit fired on {c} in every background and alone, and on nothing \
                     without {c}."
                ),
                "SELECTIVE",
            );
        }
    }
    let background_only = mentions
        .iter()
        .zip(&fired)
        .any(|(m, f)| *f && !classes.iter().any(|c| m.iter().any(|x| x == c)));
    let reasoning = if background_only {
        "The unit fired on backgrounds with no class present."
    } else {
        "The unit's firing depends on more than the presence of one class."
    };
    spurious_final(reasoning, "SPURIOUS")
}

// ---------------------------------------------------------------- bias

fn bias_step(vocab: &ConceptVocabulary, view: &View) -> String {
    let class = view.field("Target class:").unwrap_or("").to_string();
    let entry = view.entry();
    if let Some(ctx) = view.stage("contexts") {
        return bias_verdict(&class, ctx);
    }
    if !view.enabled("text2image") || class.is_empty() || view.must_answer {
        return "[BIAS]: No controlled images could be generated, so no condition \
                could be isolated.\n"
            .to_string();
    }
    let norm = vocab.normalize_phrase(&class).unwrap_or(&class).to_string();
    let contexts: Vec<&str> = vocab.canonical_tokens().filter(|c| *c != norm).collect();
    let body = format!(
        "    let class = {class:?};\n\
         \x20   let contexts = {};\n\
         \x20   let base = system.neuron(tools.text2image([\"a \" + class, \"a photo of a \" + class]))[0];\n\
         \x20   let acts = [];\n\
         \x20   let i = 0;\n\
         \x20   while i < contexts.len() {{\n\
         \x20       let prompts = [];\n\
         \x20       for c in contexts.extract(i, {CHUNK}) {{ prompts.push(\"a \" + class + \" with \" + c); }}\n\
         \x20       acts += system.neuron(tools.text2image(prompts))[0];\n\
         \x20       i += {CHUNK};\n\
         \x20   }}\n\
         \x20   #{{ stage: \"contexts\", base: base, contexts: contexts, activations: acts }}\n",
        rhai_list(contexts.iter().copied()),
    );
    program(
        "Score the class alone, then paired with every other concept.",
        entry,
        &body,
    )
}

fn bias_verdict(class: &str, v: &Value) -> String {
    let base = numbers(v.get("base"));
    let contexts = strings(v.get("contexts"));
    let acts = numbers(v.get("activations"));
    let base = if base.is_empty() {
        0.0
    } else {
        base.iter().sum::<f64>() / base.len() as f64
    };
    let best = contexts
        .iter()
        .zip(&acts)
        .map(|(c, a)| (c, a - base))
        .fold(None::<(&String, f64)>, |m, (c, g)| match m {
            Some((_, mg)) if mg >= g => m,
            _ => Some((c, g)),
        });
    match best {
        Some((ctx, gain)) if gain > BIAS_GAIN => format!(
            "[BIAS]: The {class} score is high only when {ctx} appears with it; \
             images of a {class} without {ctx} score about {base:.2} and are often missed.\n"
        ),
        _ => format!(
            "[BIAS]: Scores for {class} barely change across contexts; the classifier shows \
             uniform behavior on this class.\n"
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use maialab_core::report::{has_final_markers, parse_final};

    fn msgs(sys: &str, user: &str) -> Vec<Message> {
        vec![Message::new(Role::System, sys), Message::new(Role::User, user)]
    }

    #[test]
    fn resolves_names() {
        assert_eq!(
            Playbook::resolve("scripted", ReportKind::BiasIdentification).unwrap(),
            Playbook::BiasDefault
        );
        assert!(matches!(
            Playbook::resolve("gpt", ReportKind::NeuronDescription),
            Err(TemplateError::UnknownPlaybook(_))
        ));
    }

    #[test]
    fn describe_starts_with_exemplars_when_enabled() {
        let vocab = Arc::new(ConceptVocabulary::table_default());
        let mut b = ScriptedBackbone::new(Playbook::DescribeDefault, vocab);
        let sys = "tools.dataset_exemplars(system) -> x\ntools.text2image(prompts) -> y\n";
        let reply = b.send(&msgs(sys, "fn run_experiment(system, tools)")).unwrap();
        assert!(reply.contains("dataset_exemplars"));
        let sys = "tools.text2image(prompts) -> y\n";
        let reply = b.send(&msgs(sys, "fn run_experiment(system, tools)")).unwrap();
        assert!(reply.contains("\"a photo of \" + c"));
    }

    #[test]
    fn fired_singles_become_labels() {
        let vocab = Arc::new(ConceptVocabulary::table_default());
        let mut b = ScriptedBackbone::new(Playbook::DescribeDefault, vocab);
        let mut m = msgs("tools.text2image(p)\n", "task");
        m.push(Message::new(Role::Agent, "..."));
        m.push(Message::new(
            Role::Observation,
            format!("{RETURN_MARKER}{{\"stage\":\"singles\",\"threshold\":0.4,\"fired\":[\"truck\",\"train\"]}}"),
        ));
        let reply = b.send(&m).unwrap();
        assert!(has_final_markers(&reply, ReportKind::NeuronDescription));
        let r = parse_final(&reply, ReportKind::NeuronDescription);
        assert_eq!(r.labels, vec!["truck".to_string(), "train".to_string()]);
    }

    #[test]
    fn bias_verdict_names_largest_gain() {
        let v: Value = serde_json::json!({
            "stage": "contexts", "base": [0.3, 0.3],
            "contexts": ["hand", "stage"], "activations": [0.31, 0.9]
        });
        assert!(bias_verdict("flute", &v).contains("when stage appears"));
        let flat: Value = serde_json::json!({
            "stage": "contexts", "base": [0.3], "contexts": ["hand"], "activations": [0.32]
        });
        assert!(bias_verdict("flute", &flat).contains("uniform"));
    }
}
