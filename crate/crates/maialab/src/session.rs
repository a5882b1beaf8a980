//! The agent loop: prompt, program, observation, repeated until a final
//! report or the round budget runs out.

use std::cell::RefCell;
use std::fmt::Write as _;
use std::rc::Rc;
use std::sync::Arc;
use std::time::Duration;

use maialab_core::report::{has_final_markers, parse_final, ReportKind};
use maialab_core::FinalReport;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use maialab_core::ConceptVocabulary;

use crate::backbone::{Backbone, BackboneError, Playbook, ScriptedBackbone, RETURN_MARKER};
use crate::clients::ClientRegistry;
use crate::exemplars::ExemplarIndex;
use crate::fsutil::write_json;
use crate::image::ImageStore;
use crate::log::{ExperimentLog, LogError};
use crate::prompts::{assemble_prompts, TaskPrompt, TemplateError};
use crate::sandbox::{execute, extract_program, ExecStatus, Execution, DEFAULT_TIMEOUT};
use crate::system::System;
use crate::tools::{ToolContext, ToolName};
use crate::transcript::{Attachment, Message, Role, Transcript};

pub const DEFAULT_ROUND_BUDGET: u32 = 15;

const NUDGE: &str = "This is the last round. Reply with the final answer only, without code.";

#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub budget: u32,
    pub timeout: Duration,
    /// Ask for the final answer before the last round.
    pub nudge: bool,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            budget: DEFAULT_ROUND_BUDGET,
            timeout: DEFAULT_TIMEOUT,
            nudge: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub report: FinalReport,
    pub transcript: Transcript,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("SessionAborted: backbone failed in round {round}: {source}")]
    Aborted {
        round: u32,
        source: BackboneError,
        transcript: Box<Transcript>,
    },
}

pub struct Session<'a> {
    pub kind: ReportKind,
    pub backbone: &'a mut dyn Backbone,
    pub system: Arc<dyn System>,
    pub ctx: Rc<RefCell<ToolContext>>,
    pub options: SessionOptions,
}

impl Session<'_> {
    pub fn run(self, system_prompt: &str, task_prompt: &str) -> Result<SessionOutcome, SessionError> {
        let mut transcript = Transcript::default();
        transcript.push(Message::new(Role::System, system_prompt));
        transcript.push(Message::new(Role::User, task_prompt));
        let budget = self.options.budget.max(1);
        for round in 1..=budget {
            if self.options.nudge && round == budget && budget > 1 {
                transcript.push(Message::new(Role::User, NUDGE));
            }
            let reply = match self.backbone.send(&transcript.messages) {
                Ok(r) => r,
                Err(source) => {
                    transcript.rounds_used = round - 1;
                    return Err(SessionError::Aborted {
                        round,
                        source,
                        transcript: Box::new(transcript),
                    });
                }
            };
            transcript.push(Message::new(Role::Agent, reply.clone()));
            transcript.rounds_used = round;
            if has_final_markers(&reply, self.kind) {
                let mut report = parse_final(&reply, self.kind);
                report.rounds_used = round;
                return Ok(SessionOutcome { report, transcript });
            }
            let observation = match extract_program(&reply, self.kind) {
                Err(e) => Message::new(
                    Role::Observation,
                    format!("{e}\nReply with exactly one code block, or give the final answer."),
                ),
                Ok(program) => {
                    self.ctx.borrow_mut().session_round = round;
                    let exec = execute(&program, self.system.clone(), self.ctx.clone(), self.options.timeout);
                    observe(&exec, &self.ctx.borrow(), self.options.timeout)
                }
            };
            transcript.push(observation);
        }
        let report = FinalReport::unparsed(
            self.kind,
            budget,
            &format!("round budget of {budget} spent without a final answer"),
        );
        Ok(SessionOutcome { report, transcript })
    }
}

fn observe(exec: &Execution, ctx: &ToolContext, timeout: Duration) -> Message {
    let mut text = String::new();
    match &exec.status {
        ExecStatus::Completed => text.push_str("Status: completed\n"),
        ExecStatus::Error(e) => {
            let _ = writeln!(text, "Status: error\n{e}");
        }
        ExecStatus::Timeout => {
            let _ = writeln!(text, "Status: timed out after {} s", timeout.as_secs_f64());
        }
    }
    if !exec.printed.is_empty() {
        text.push_str("Printed:\n");
        for line in &exec.printed {
            let _ = writeln!(text, "{line}");
        }
    }
    let mut attachments = Vec::new();
    for entry in &ctx.log.entries()[exec.new_entries.clone()] {
        let _ = writeln!(text, "Logged entry {}: {}", entry.round_index, entry.notes);
        for (i, record) in entry.records.iter().enumerate() {
            let caption = format!("{}: activation {}", record.title, record.reported_activation);
            let _ = writeln!(text, "  {caption}");
            attachments.push(Attachment {
                caption,
                image: record.image.clone(),
                handle: entry.images.get(i).cloned(),
            });
        }
    }
    if let Some(v) = &exec.value {
        text.push_str(RETURN_MARKER);
        text.push_str(&serde_json::to_string(v).expect("json values serialize"));
        text.push('\n');
    }
    Message {
        role: Role::Observation,
        text,
        attachments,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("artifact io: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything shared by the sessions of one run.
#[derive(Clone)]
pub struct AgentSetup {
    pub vocab: Arc<ConceptVocabulary>,
    pub clients: Arc<ClientRegistry>,
    pub backbone: String,
    pub enabled: BTreeSet<ToolName>,
    pub options: SessionOptions,
    pub run_id: String,
    pub seed: u64,
    pub exemplars: Option<Arc<ExemplarIndex>>,
    /// Where logged images go; `None` keeps them in memory.
    pub image_root: Option<PathBuf>,
}

impl AgentSetup {
    pub fn new(vocab: Arc<ConceptVocabulary>, clients: Arc<ClientRegistry>, seed: u64) -> Self {
        Self {
            vocab,
            clients,
            backbone: "scripted".to_string(),
            enabled: crate::tools::all_tools(),
            options: SessionOptions::default(),
            run_id: format!("run-{seed}"),
            seed,
            exemplars: None,
            image_root: None,
        }
    }

    /// Runs one session. With `unit_dir`, the log, transcript and report are
    /// written there.
    pub fn run(
        &self,
        task: &TaskPrompt,
        system: Arc<dyn System>,
        unit_dir: Option<&Path>,
    ) -> Result<SessionOutcome, AgentError> {
        let playbook = Playbook::resolve(&self.backbone, task.kind)?;
        let mut backbone = ScriptedBackbone::new(playbook, self.vocab.clone());
        let (system_prompt, task_prompt) = assemble_prompts(task, &self.enabled)?;
        let mut ctx = ToolContext::new(self.clients.clone(), &self.run_id, self.seed)
            .with_enabled(self.enabled.clone());
        if let Some(index) = &self.exemplars {
            ctx = ctx.with_exemplars(index.clone());
        }
        if let Some(root) = &self.image_root {
            ctx = ctx.with_image_store(ImageStore::new(root));
        }
        if let Some(dir) = unit_dir {
            std::fs::create_dir_all(dir)?;
            ctx = ctx.with_log(ExperimentLog::persisted(&dir.join("log.jsonl"))?);
        }
        let ctx = Rc::new(RefCell::new(ctx));
        let session = Session {
            kind: task.kind,
            backbone: &mut backbone,
            system,
            ctx,
            options: self.options.clone(),
        };
        let result = session.run(&system_prompt, &task_prompt);
        if let Some(dir) = unit_dir {
            match &result {
                Ok(out) => {
                    out.transcript.write(&dir.join("transcript.jsonl"))?;
                    write_json(&dir.join("report.json"), &out.report)?;
                }
                Err(SessionError::Aborted { transcript, .. }) => {
                    transcript.write(&dir.join("transcript.jsonl"))?;
                }
            }
        }
        Ok(result?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::ClientKeys;
    use crate::system::SyntheticSystem;
    use maialab_core::{NeuronAddress, SyntheticNeuronSpec};

    struct Failing;
    impl Backbone for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn send(&mut self, _: &[Message]) -> Result<String, BackboneError> {
            Err(BackboneError("offline".into()))
        }
    }

    struct Chatty;
    impl Backbone for Chatty {
        fn name(&self) -> &str {
            "chatty"
        }
        fn send(&mut self, _: &[Message]) -> Result<String, BackboneError> {
            Ok("thinking, no code yet".into())
        }
    }

    fn parts() -> (Arc<dyn System>, Rc<RefCell<ToolContext>>) {
        let vocab = Arc::new(ConceptVocabulary::table_default());
        let clients = Arc::new(ClientRegistry::from_keys(&ClientKeys::default(), vocab.clone()).unwrap());
        let system: Arc<dyn System> = Arc::new(SyntheticSystem::new(
            NeuronAddress::synthetic(0),
            SyntheticNeuronSpec::monosemantic("dog"),
            vocab,
        ));
        (system, Rc::new(RefCell::new(ToolContext::new(clients, "t", 0))))
    }

    #[test]
    fn backbone_failure_aborts_with_transcript() {
        let (system, ctx) = parts();
        let err = Session {
            kind: ReportKind::NeuronDescription,
            backbone: &mut Failing,
            system,
            ctx,
            options: SessionOptions::default(),
        }
        .run("sys", "task")
        .unwrap_err();
        let SessionError::Aborted { transcript, .. } = err;
        assert_eq!(transcript.messages.len(), 2);
    }

    #[test]
    fn budget_exhaustion_gives_unparsed_report() {
        let (system, ctx) = parts();
        let out = Session {
            kind: ReportKind::NeuronDescription,
            backbone: &mut Chatty,
            system,
            ctx,
            options: SessionOptions {
                budget: 3,
                nudge: true,
                ..SessionOptions::default()
            },
        }
        .run("sys", "task")
        .unwrap();
        assert!(!out.report.parse_ok);
        assert_eq!(out.report.rounds_used, 3);
        assert!(out.transcript.messages.iter().any(|m| m.text == NUDGE));
        assert!(out.transcript.messages[3].text.starts_with("ExtractionError"));
    }

    #[test]
    fn scripted_session_labels_a_synthetic_unit() {
        let vocab = Arc::new(ConceptVocabulary::table_default());
        let clients = Arc::new(ClientRegistry::from_keys(&ClientKeys::default(), vocab.clone()).unwrap());
        let setup = AgentSetup::new(vocab.clone(), clients, 0);
        let mut enabled = setup.enabled.clone();
        enabled.remove(&ToolName::DatasetExemplars);
        let setup = AgentSetup { enabled, ..setup };
        let system: Arc<dyn System> = Arc::new(SyntheticSystem::new(
            NeuronAddress::synthetic(0),
            SyntheticNeuronSpec::polysemantic("truck", "train"),
            vocab,
        ));
        let out = setup
            .run(&TaskPrompt::new(ReportKind::NeuronDescription), system, None)
            .unwrap();
        assert!(out.report.parse_ok, "{:?}", out.transcript.messages.last());
        let mut labels = out.report.labels.clone();
        labels.sort();
        assert_eq!(labels, vec!["train".to_string(), "truck".to_string()], "{}", out.transcript.to_jsonl());
    }
}
