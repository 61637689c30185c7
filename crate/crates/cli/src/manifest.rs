//! Run manifests: everything needed to reproduce an output directory.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::{execute, CliError, Outputs};
use crate::RunArgs;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub args: RunArgs,
    pub model_sha256: String,
    /// The model file, verbatim.
    pub model: String,
    pub outputs: Vec<OutputFile>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn hash_file(path: &Path) -> Result<String, CliError> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

pub fn write_manifest(outputs: &Outputs, args: &RunArgs, model_text: &str) -> Result<(), CliError> {
    let files = outputs
        .files()
        .iter()
        .map(|f| Ok(OutputFile { file: f.clone(), sha256: hash_file(&outputs.dir().join(f))? }))
        .collect::<Result<Vec<_>, CliError>>()?;
    let manifest = Manifest {
        tool: "plii".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        args: args.clone(),
        model_sha256: sha256_hex(model_text.as_bytes()),
        model: model_text.to_string(),
        outputs: files,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))? + "\n";
    std::fs::write(outputs.dir().join(MANIFEST), text)?;
    Ok(())
}

/// Re-runs the recorded command into `out` and checks every recorded output
/// hash.
pub fn replay(manifest_path: &Path, out: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", manifest_path.display())))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("bad manifest: {e}")))?;
    if sha256_hex(m.model.as_bytes()) != m.model_sha256 {
        return Err(CliError::Runtime("embedded model does not match its recorded hash".into()));
    }
    if m.version != env!("CARGO_PKG_VERSION") {
        eprintln!("warning: manifest written by version {}, replaying with {}", m.version, env!("CARGO_PKG_VERSION"));
    }
    let outcome = execute(&m.args, &m.model, out);
    if let Err(CliError::Runtime(e)) = outcome {
        return Err(CliError::Runtime(e));
    }
    let mut mismatches = Vec::new();
    for f in &m.outputs {
        let path = out.join(&f.file);
        match hash_file(&path) {
            Ok(h) if h == f.sha256 => {}
            Ok(_) => mismatches.push(format!("{} differs", f.file)),
            Err(_) => mismatches.push(format!("{} missing", f.file)),
        }
    }
    if mismatches.is_empty() {
        println!("replay: {} output files identical", m.outputs.len());
        outcome
    } else {
        Err(CliError::Validation(format!("replay mismatch: {}", mismatches.join(", "))))
    }
}
