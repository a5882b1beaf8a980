//! System-prompt API reference and task templates.

use std::collections::{BTreeMap, BTreeSet};

use maialab_core::ReportKind;
use serde::{Deserialize, Serialize};

use crate::tools::ToolName;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("TemplateError: unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("TemplateError: template `{template}` needs slot `{slot}`")]
    MissingSlot { template: &'static str, slot: &'static str },
    #[error("TemplateError: unknown playbook `{0}`")]
    UnknownPlaybook(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPrompt {
    pub kind: ReportKind,
    #[serde(default)]
    pub slots: BTreeMap<String, String>,
}

impl TaskPrompt {
    pub fn new(kind: ReportKind) -> Self {
        Self {
            kind,
            slots: BTreeMap::new(),
        }
    }

    pub fn from_template_id(id: &str) -> Result<Self, TemplateError> {
        ReportKind::from_template_id(id)
            .map(Self::new)
            .ok_or_else(|| TemplateError::UnknownTemplate(id.to_string()))
    }

    pub fn with_slot(mut self, key: &str, value: &str) -> Self {
        self.slots.insert(key.to_string(), value.to_string());
        self
    }

    fn slot(&self, template: &'static str, slot: &'static str) -> Result<&str, TemplateError> {
        self.slots
            .get(slot)
            .map(String::as_str)
            .filter(|v| !v.trim().is_empty())
            .ok_or(TemplateError::MissingSlot { template, slot })
    }
}

const API_INTRO: &str = "\
You study one unit inside a vision model by writing small experiment programs.
Programs are Rhai scripts. Each reply that runs an experiment holds exactly one
fenced code block defining exactly one function; the task message names it.
The function receives two values, `system` and `tools`, and whatever it
returns is sent back to you as JSON. Nothing outside the function may appear
in the block. Files, processes, `import` and `eval` are unavailable.

Images are opaque handles. Activations are shown rounded: two decimals for
detector-style units, whole numbers for units of trained networks.
";

const API_SYSTEM: &str = "\
## System

system.neuron(images) -> [activations, masked_images]
    Runs the unit on an array of images (at least one). Returns an array
    whose first element holds one activation per image and whose second
    holds the same images with everything outside the unit's evidence
    darkened and the evidence outlined in red. Order follows the input.
    Example:
        let r = system.neuron(tools.text2image([\"a dog on the grass\"]));
        let acts = r[0];
        let masked = r[1];
";

const API_TOOLS_HEAD: &str = "\
## Tools

Every tool raises an error naming the problem (for example `ToolDisabled` or
`ArityError`); an uncaught error ends the program and is reported to you.
Calls that take prompts accept at most 16 per call.
";

fn tool_doc(tool: ToolName) -> &'static str {
    match tool {
        ToolName::DatasetExemplars => "\
tools.dataset_exemplars(system) -> [activations, masked_images]
    The 15 dataset images on which the unit responds most strongly, highest
    first, with their masked versions. Also records the 15th activation as
    the reference level used by log_experiment.
",
        ToolName::Text2Image => "\
tools.text2image(prompts) -> images
    Draws one image per text prompt, in order. Keep prompts concrete: name
    the objects and the setting you want.
    Example: tools.text2image([\"a red car on a bridge\", \"a car\"])
",
        ToolName::EditImages => "\
tools.edit_images(prompts, edits) -> [images, titles]
    Draws each prompt, applies the edit with the same index and returns
    originals and edited versions alternating: original 1, edit 1,
    original 2, edit 2 and so on. Both arrays must be the same length.
    Edits that remove things (remove, delete, erase) are refused; describe
    what should appear instead, e.g. \"replace the dog with a lion\".
",
        ToolName::DescribeImages => "\
tools.describe_images(images, titles) -> text
    Asks an observer with no memory of your experiments what each image
    shows (for masked images, what lies in the highlighted area). Returns
    one `title: description` line per image.
",
        ToolName::SummarizeImages => "\
tools.summarize_images(images) -> text
    Reports what at least two images have in common. Anything that appears
    in every image but outside the highlighted areas is listed separately
    as context.
",
        ToolName::LogExperiment => "\
tools.log_experiment(activations, images, titles, notes)
    Saves results to the experiment record and shows the images to you
    with their activations as captions. The first three arrays must have
    equal length; `notes` is free text and may be omitted. When every
    activation falls below the dataset exemplar level, the record says so.
",
    }
}

/// API reference restricted to the enabled tools.
pub fn system_prompt(enabled: &BTreeSet<ToolName>) -> String {
    let mut out = String::from(API_INTRO);
    out.push('\n');
    out.push_str(API_SYSTEM);
    out.push('\n');
    out.push_str(API_TOOLS_HEAD);
    for tool in ToolName::ALL {
        if enabled.contains(&tool) {
            out.push('\n');
            out.push_str(tool_doc(tool));
        }
    }
    out
}

const FENCE: &str = "```";

/// User message for the task.
pub fn render_task(task: &TaskPrompt) -> Result<String, TemplateError> {
    let entry = task.kind.entry_point();
    Ok(match task.kind {
        ReportKind::NeuronDescription => {
            let unit = task
                .slots
                .get("unit")
                .map(|u| format!(" ({u})"))
                .unwrap_or_default();
            format!(
                "Work out what the unit{unit} responds to.\n\n\
Form a guess, test it with generated and edited images, and revise until\n\
the evidence settles. Each reply runs at most one experiment:\n\n\
{FENCE}rhai\nfn {entry}(system, tools) {{\n    // ...\n}}\n{FENCE}\n\n\
When you are done, reply without code, using these lines:\n\
[DESCRIPTION]: <what the unit responds to, in a sentence or two>\n\
[LABEL]: <a short label>\n\
If the unit responds to several unrelated things, write [LABEL 1]:,\n\
[LABEL 2]: and so on, one per behavior.\n"
            )
        }
        ReportKind::SpuriousClassification => {
            let template = "spurious-classification";
            let classes = task.slot(template, "classes")?;
            let envs = task.slot(template, "environments")?;
            format!(
                "The unit feeds a classifier that tells these classes apart.\n\
Classes: {classes}\n\
Backgrounds: {envs}\n\n\
Decide whether the unit tracks exactly one class wherever it appears, or\n\
whether it leans on backgrounds or several classes. Each reply runs at most\n\
one experiment:\n\n\
{FENCE}rhai\nfn {entry}(system, tools) {{\n    // ...\n}}\n{FENCE}\n\n\
When you are done, reply without code:\n\
[REASONING]: <what the experiments showed>\n\
[LABEL]: SELECTIVE or SPURIOUS\n\
Only answer SELECTIVE when the evidence clearly ties the unit to one class;\n\
otherwise answer SPURIOUS.\n"
            )
        }
        ReportKind::BiasIdentification => {
            let class = task.slot("bias-identification", "class_label")?;
            format!(
                "The unit is a classifier's output probability for one class.\n\
Target class: {class}\n\n\
Find out which images of this class get low scores and what separates\n\
them from the ones that score high, such as the setting, companions or\n\
props. Each reply runs at most one experiment:\n\n\
{FENCE}rhai\nfn {entry}(system, tools) {{\n    // ...\n}}\n{FENCE}\n\n\
When you are done, reply without code:\n\
[BIAS]: <the conditions under which the class is missed, or a note that\n\
the scores barely change>\n"
            )
        }
    })
}

/// `(system prompt, user prompt)` for a task under the given tool set.
pub fn assemble_prompts(
    task: &TaskPrompt,
    enabled: &BTreeSet<ToolName>,
) -> Result<(String, String), TemplateError> {
    Ok((system_prompt(enabled), render_task(task)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::all_tools;
    use maialab_core::report::has_final_markers;

    #[test]
    fn full_prompt_documents_both_handles() {
        let (sys, user) =
            assemble_prompts(&TaskPrompt::new(ReportKind::NeuronDescription), &all_tools()).unwrap();
        assert!(sys.contains("## System") && sys.contains("## Tools"));
        assert!(user.contains("[DESCRIPTION]") && user.contains("[LABEL]"));
        assert!(user.contains("fn run_experiment(system, tools)"));
    }

    #[test]
    fn disabled_tools_are_left_out() {
        let mut enabled = all_tools();
        enabled.remove(&ToolName::DatasetExemplars);
        let sys = system_prompt(&enabled);
        assert!(!sys.contains("tools.dataset_exemplars"));
        assert!(sys.contains("tools.text2image"));
    }

    #[test]
    fn bias_template_needs_class() {
        let task = TaskPrompt::new(ReportKind::BiasIdentification);
        assert_eq!(
            render_task(&task),
            Err(TemplateError::MissingSlot {
                template: "bias-identification",
                slot: "class_label"
            })
        );
        let text = render_task(&task.with_slot("class_label", "flagpole")).unwrap();
        assert!(text.contains("flagpole"));
        assert!(text.contains("[BIAS]"));
    }

    #[test]
    fn unknown_template() {
        assert!(matches!(
            TaskPrompt::from_template_id("haiku"),
            Err(TemplateError::UnknownTemplate(_))
        ));
    }

    #[test]
    fn templates_carry_their_markers() {
        let spurious = TaskPrompt::new(ReportKind::SpuriousClassification)
            .with_slot("classes", "a, b")
            .with_slot("environments", "x, y");
        for task in [
            TaskPrompt::new(ReportKind::NeuronDescription),
            spurious,
            TaskPrompt::new(ReportKind::BiasIdentification).with_slot("class_label", "cup"),
        ] {
            let text = render_task(&task).unwrap();
            assert!(has_final_markers(&text, task.kind), "{text}");
        }
    }
}
