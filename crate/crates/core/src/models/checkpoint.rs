use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{DalError, Result};
use crate::models::config::ModelConfig;
use crate::models::network::Model;
use crate::tensor::Tensor;

const MAGIC: &str = "dal-checkpoint 1";

/// Plain-text serialisation of a model. Values use shortest round-trip
/// formatting, so a load reproduces every parameter bit for bit.
pub fn format_checkpoint(model: &Model) -> String {
    let mut out = String::new();
    let config = serde_json::to_string(model.config()).expect("config serialises");
    let labels = serde_json::to_string(model.label_names()).expect("labels serialise");
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "config {config}").unwrap();
    writeln!(out, "labels {labels}").unwrap();
    writeln!(out, "vocab_size {}", model.vocab_size()).unwrap();
    let store = model.params();
    for (name, value) in store.snapshot() {
        let dims: Vec<String> = value.shape().iter().map(usize::to_string).collect();
        let trainable = store.trainable(&name).unwrap_or(true);
        writeln!(out, "param {name} {trainable} {}", dims.join("x")).unwrap();
        let values: Vec<String> = value.data().iter().map(f64::to_string).collect();
        writeln!(out, "{}", values.join(" ")).unwrap();
    }
    out
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    crate::data::write_file(path.as_ref(), &format_checkpoint(model))
}

pub fn parse_checkpoint(text: &str, origin: &str) -> Result<Model> {
    let err = |line: usize, message: String| DalError::Parse { path: origin.to_owned(), line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
    let field = |lines: &mut std::iter::Peekable<_>, key: &str| -> Result<(usize, String)> {
        let (n, line): (usize, &str) = lines.next().ok_or_else(|| err(0, format!("missing `{key}`")))?;
        if key == MAGIC {
            return if line == MAGIC { Ok((n, String::new())) } else { Err(err(n, format!("expected `{MAGIC}`"))) };
        }
        let rest = line
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| err(n, format!("expected `{key}`")))?;
        Ok((n, rest.to_owned()))
    };
    field(&mut lines, MAGIC)?;
    let (n, config) = field(&mut lines, "config")?;
    let config: ModelConfig = serde_json::from_str(&config).map_err(|e| err(n, e.to_string()))?;
    let (n, labels) = field(&mut lines, "labels")?;
    let labels: Vec<String> = serde_json::from_str(&labels).map_err(|e| err(n, e.to_string()))?;
    let (n, vocab) = field(&mut lines, "vocab_size")?;
    let vocab_size: usize = vocab.parse().map_err(|_| err(n, format!("bad vocabulary size `{vocab}`")))?;
    let mut params = Vec::new();
    while lines.peek().is_some() {
        let (n, header) = field(&mut lines, "param")?;
        let parts: Vec<&str> = header.split(' ').collect();
        let [name, trainable, dims] = parts[..] else {
            return Err(err(n, "expected `param <name> <trainable> <dims>`".into()));
        };
        let trainable: bool = trainable.parse().map_err(|_| err(n, format!("bad flag `{trainable}`")))?;
        let shape = dims
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| err(n, format!("bad shape `{dims}`")))?;
        let (vn, values) = lines.next().ok_or_else(|| err(n + 1, format!("missing values for `{name}`")))?;
        let data = values
            .split(' ')
            .filter(|v| !v.is_empty())
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| err(vn, e.to_string()))?;
        let tensor = Tensor::new(shape, data).map_err(|e| err(vn, e.to_string()))?;
        params.push((name.to_owned(), trainable, tensor));
    }
    let mut model = Model::build(&config, vocab_size, labels, None, 0)?;
    let store = model.params_mut();
    let expected: Vec<String> = store.names().map(str::to_owned).collect();
    let found: Vec<&str> = params.iter().map(|(n, _, _)| n.as_str()).collect();
    if expected.iter().map(String::as_str).ne(found.iter().copied()) {
        return Err(DalError::Incompatible(format!(
            "{origin}: checkpoint parameters {found:?} do not match the architecture's {expected:?}"
        )));
    }
    for (name, trainable, value) in params {
        if store.trainable(&name) != Some(trainable) {
            return Err(DalError::Incompatible(format!("{origin}: parameter `{name}` has the wrong trainable flag")));
        }
        store.set(&name, value)?;
    }
    Ok(model)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DalError::io(path, e))?;
    parse_checkpoint(&text, &path.display().to_string())
}
