//! Extraction, validation and contained execution of experiment programs.
//!
//! Programs are Rhai scripts. The engine gets no module resolver, no `eval`
//! and no host functions beyond the system and tools handles, so programs
//! cannot reach files, processes or the network.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use maialab_core::ReportKind;
use rhai::{Array, Dynamic, Engine, EvalAltResult, OptimizationLevel, Scope, AST};

use crate::image::Image;
use crate::system::{masked_images, System};
use crate::tools::ToolContext;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProgramError {
    #[error("ExtractionError: {0}")]
    Extraction(String),
    #[error("ProgramShapeError: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentProgram {
    pub source: String,
    pub entry: &'static str,
}

/// Bodies of all fenced code blocks in `message`.
fn fenced_blocks(message: &str) -> Result<Vec<String>, ProgramError> {
    let mut blocks = Vec::new();
    let mut open: Option<Vec<&str>> = None;
    for line in message.lines() {
        let fence = line.trim_start().starts_with("```");
        match (&mut open, fence) {
            (None, true) => open = Some(Vec::new()),
            (Some(body), true) => {
                blocks.push(body.join("\n"));
                open = None;
            }
            (Some(body), false) => body.push(line),
            (None, false) => {}
        }
    }
    if open.is_some() {
        return Err(ProgramError::Extraction("a code fence is never closed".into()));
    }
    Ok(blocks)
}

fn engine() -> Engine {
    let mut engine = Engine::new();
    engine.set_optimization_level(OptimizationLevel::None);
    engine.set_module_resolver(rhai::module_resolvers::DummyModuleResolver::new());
    engine.disable_symbol("eval");
    engine.set_max_call_levels(32);
    engine.set_max_expr_depths(64, 32);
    engine.set_max_string_size(1 << 20);
    engine.set_max_array_size(1 << 16);
    engine.set_max_map_size(1 << 12);
    engine
}

fn compile(source: &str) -> Result<AST, ProgramError> {
    engine()
        .compile(source)
        .map_err(|e| ProgramError::Shape(format!("does not parse: {e}")))
}

/// Finds the single code block and checks it defines exactly the template's
/// entry function with two parameters and nothing else.
pub fn extract_program(message: &str, kind: ReportKind) -> Result<ExperimentProgram, ProgramError> {
    let blocks = fenced_blocks(message)?;
    let source = match blocks.len() {
        1 => blocks.into_iter().next().expect("one block"),
        0 => return Err(ProgramError::Extraction("no fenced code block found".into())),
        n => {
            return Err(ProgramError::Extraction(format!(
                "found {n} code blocks; send exactly one"
            )))
        }
    };
    let entry = kind.entry_point();
    let ast = compile(&source)?;
    // Closures compile to anonymous script functions; they do not count.
    let fns: Vec<(String, usize)> = ast
        .iter_functions()
        .filter(|f| !f.name.starts_with("anon$"))
        .map(|f| (f.name.to_string(), f.params.len()))
        .collect();
    match fns.as_slice() {
        [(name, 2)] if name == entry => {}
        [(name, n)] if name == entry => {
            return Err(ProgramError::Shape(format!(
                "`{entry}` must take 2 parameters (system, tools), found {n}"
            )))
        }
        [(name, _)] => {
            return Err(ProgramError::Shape(format!(
                "the function must be named `{entry}`, found `{name}`"
            )))
        }
        [] => return Err(ProgramError::Shape(format!("no function `{entry}` defined"))),
        many => {
            return Err(ProgramError::Shape(format!(
                "define exactly one function; found {}",
                many.len()
            )))
        }
    }
    if !ast.statements().is_empty() {
        return Err(ProgramError::Shape(
            "statements outside the function are not allowed".into(),
        ));
    }
    Ok(ExperimentProgram { source, entry })
}

#[derive(Clone)]
struct ToolsHandle(Rc<RefCell<ToolContext>>);

#[derive(Clone)]
struct SystemHandle {
    system: Arc<dyn System>,
    ctx: Rc<RefCell<ToolContext>>,
}

type Fallible<T> = Result<T, Box<EvalAltResult>>;

fn fail(e: impl std::fmt::Display) -> Box<EvalAltResult> {
    e.to_string().into()
}

fn to_images(arr: Array, what: &str) -> Fallible<Vec<Image>> {
    arr.into_iter()
        .enumerate()
        .map(|(i, d)| {
            let name = d.type_name();
            d.try_cast::<Image>()
                .ok_or_else(|| fail(format!("TypeError: {what}[{i}] is {name}, expected an image")))
        })
        .collect()
}

fn to_strings(arr: Array, what: &str) -> Fallible<Vec<String>> {
    arr.into_iter()
        .enumerate()
        .map(|(i, d)| {
            let name = d.type_name();
            d.into_string()
                .map_err(|_| fail(format!("TypeError: {what}[{i}] is {name}, expected a string")))
        })
        .collect()
}

fn to_numbers(arr: Array, what: &str) -> Fallible<Vec<f64>> {
    arr.into_iter()
        .enumerate()
        .map(|(i, d)| {
            d.as_float()
                .or_else(|_| d.as_int().map(|v| v as f64))
                .map_err(|t| fail(format!("TypeError: {what}[{i}] is {t}, expected a number")))
        })
        .collect()
}

fn numbers(v: &[f64]) -> Array {
    v.iter().map(|x| Dynamic::from_float(*x)).collect()
}

fn images(v: Vec<Image>) -> Array {
    v.into_iter().map(Dynamic::from).collect()
}

fn strings(v: Vec<String>) -> Array {
    v.into_iter().map(Dynamic::from).collect()
}

fn register_api(engine: &mut Engine) {
    engine
        .register_type_with_name::<Image>("Image")
        .register_get("id", |i: &mut Image| i.label())
        .register_fn("to_string", |i: &mut Image| format!("<image:{}>", i.label()))
        .register_fn("to_debug", |i: &mut Image| format!("<image:{}>", i.label()));
    engine.register_type_with_name::<SystemHandle>("System");
    engine.register_type_with_name::<ToolsHandle>("Tools");

    engine.register_fn("neuron", |s: &mut SystemHandle, imgs: Array| -> Fallible<Array> {
        let imgs = to_images(imgs, "images")?;
        let results = s.system.probe(&imgs).map_err(fail)?;
        let masked = masked_images(&imgs, &results);
        let full: Vec<f64> = results.iter().map(|r| r.activation).collect();
        s.ctx.borrow_mut().note_probed(&masked, &full);
        let reported: Vec<f64> = results.iter().map(|r| r.reported_activation).collect();
        Ok(vec![Dynamic::from_array(numbers(&reported)), Dynamic::from_array(images(masked))])
    });
    engine.register_fn(
        "dataset_exemplars",
        |t: &mut ToolsHandle, s: SystemHandle| -> Fallible<Array> {
            let (acts, imgs) = t.0.borrow_mut().dataset_exemplars(s.system.as_ref()).map_err(fail)?;
            Ok(vec![Dynamic::from_array(numbers(&acts)), Dynamic::from_array(images(imgs))])
        },
    );
    engine.register_fn("text2image", |t: &mut ToolsHandle, prompts: Array| -> Fallible<Array> {
        let prompts = to_strings(prompts, "prompts")?;
        Ok(images(t.0.borrow_mut().text2image(&prompts).map_err(fail)?))
    });
    engine.register_fn(
        "edit_images",
        |t: &mut ToolsHandle, prompts: Array, edits: Array| -> Fallible<Array> {
            let prompts = to_strings(prompts, "prompts")?;
            let edits = to_strings(edits, "edits")?;
            let (imgs, titles) = t.0.borrow_mut().edit_images(&prompts, &edits).map_err(fail)?;
            Ok(vec![Dynamic::from_array(images(imgs)), Dynamic::from_array(strings(titles))])
        },
    );
    engine.register_fn(
        "describe_images",
        |t: &mut ToolsHandle, imgs: Array, titles: Array| -> Fallible<String> {
            let imgs = to_images(imgs, "images")?;
            let titles = to_strings(titles, "titles")?;
            t.0.borrow_mut().describe_images(&imgs, &titles).map_err(fail)
        },
    );
    engine.register_fn("summarize_images", |t: &mut ToolsHandle, imgs: Array| -> Fallible<String> {
        let imgs = to_images(imgs, "images")?;
        t.0.borrow_mut().summarize_images(&imgs).map_err(fail)
    });
    let log = |t: &mut ToolsHandle, acts: Array, imgs: Array, titles: Array, notes: &str| -> Fallible<()> {
        let acts = to_numbers(acts, "activations")?;
        let imgs = to_images(imgs, "images")?;
        let titles = to_strings(titles, "titles")?;
        t.0.borrow_mut().log_experiment(&acts, &imgs, &titles, notes).map_err(fail)
    };
    engine.register_fn(
        "log_experiment",
        move |t: &mut ToolsHandle, acts: Array, imgs: Array, titles: Array, notes: &str| {
            log(t, acts, imgs, titles, notes)
        },
    );
    engine.register_fn(
        "log_experiment",
        move |t: &mut ToolsHandle, acts: Array, imgs: Array, titles: Array| log(t, acts, imgs, titles, ""),
    );
}

/// JSON view of a program's return value. Images become `<image:id>`.
pub fn dynamic_to_json(d: &Dynamic) -> serde_json::Value {
    use serde_json::Value;
    if d.is_unit() {
        return Value::Null;
    }
    if let Ok(b) = d.as_bool() {
        return Value::Bool(b);
    }
    if let Ok(i) = d.as_int() {
        return Value::from(i);
    }
    if let Ok(f) = d.as_float() {
        return serde_json::Number::from_f64(f).map_or_else(|| Value::String(f.to_string()), Value::Number);
    }
    if let Ok(c) = d.as_char() {
        return Value::String(c.to_string());
    }
    if d.is_string() {
        return Value::String(d.clone().into_string().expect("checked string"));
    }
    if let Some(img) = d.read_lock::<Image>() {
        return Value::String(format!("<image:{}>", img.label()));
    }
    if d.is_array() {
        let arr = d.read_lock::<Array>().expect("checked array");
        return Value::Array(arr.iter().map(dynamic_to_json).collect());
    }
    if d.is_map() {
        let map = d.read_lock::<rhai::Map>().expect("checked map");
        return Value::Object(map.iter().map(|(k, v)| (k.to_string(), dynamic_to_json(v))).collect());
    }
    Value::String(format!("<{}>", d.type_name()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExecStatus {
    Completed,
    Error(String),
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub status: ExecStatus,
    pub value: Option<serde_json::Value>,
    pub printed: Vec<String>,
    /// Log entries this run appended, as indices into the context log.
    pub new_entries: std::ops::Range<usize>,
}

/// Runs the entry function with `(system, tools)` and a wall-clock deadline.
pub fn execute(
    program: &ExperimentProgram,
    system: Arc<dyn System>,
    ctx: Rc<RefCell<ToolContext>>,
    timeout: Duration,
) -> Execution {
    let start_entries = ctx.borrow().log.len();
    ctx.borrow_mut().program_source = program.source.clone();
    let printed = Rc::new(RefCell::new(Vec::new()));
    let mut engine = engine();
    register_api(&mut engine);
    {
        let out = printed.clone();
        engine.on_print(move |s| out.borrow_mut().push(s.to_string()));
        let out = printed.clone();
        engine.on_debug(move |s, _, _| out.borrow_mut().push(s.to_string()));
    }
    let deadline = Instant::now() + timeout;
    engine.on_progress(move |_| (Instant::now() >= deadline).then(|| Dynamic::from("deadline")));

    let result = engine.compile(&program.source).map_err(|e| e.to_string()).and_then(|ast| {
        let args = (
            SystemHandle {
                system,
                ctx: ctx.clone(),
            },
            ToolsHandle(ctx.clone()),
        );
        engine
            .call_fn::<Dynamic>(&mut Scope::new(), &ast, program.entry, args)
            .map_err(|e| match *e {
                EvalAltResult::ErrorTerminated(..) => String::from("\u{0}timeout"),
                other => other.to_string(),
            })
    });
    let end_entries = ctx.borrow().log.len();
    let (status, value) = match result {
        Ok(v) => (ExecStatus::Completed, Some(dynamic_to_json(&v))),
        Err(e) if e == "\u{0}timeout" => (ExecStatus::Timeout, None),
        Err(e) => (ExecStatus::Error(e), None),
    };
    let printed = printed.borrow().clone();
    Execution {
        status,
        value,
        printed,
        new_entries: start_entries..end_entries,
    }
}
