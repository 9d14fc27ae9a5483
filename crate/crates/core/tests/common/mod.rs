#![allow(dead_code)]

use std::path::{Path, PathBuf};

use fedsilo::model::{ModelSpec, ParamVector};
use fedsilo::transport::RoundMessage;

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

/// Small fixed message whose encoding is checked in as a golden file.
pub fn golden_message() -> RoundMessage {
    let spec = ModelSpec::new(vec![2, 3, 2]).unwrap();
    let data = (0..spec.num_params()).map(|i| i as f64 * 0.25 - 1.0).collect();
    RoundMessage::local(3, 2, 5, ParamVector::new(spec.manifest(), data).unwrap())
}

/// Compares `bytes` with the golden file `name`, rewriting it instead when
/// `FEDSILO_BLESS` is set.
pub fn check_golden(name: &str, bytes: &[u8]) -> Result<(), String> {
    let path = golden_dir().join(name);
    if std::env::var_os("FEDSILO_BLESS").is_some() {
        std::fs::create_dir_all(golden_dir()).map_err(|e| e.to_string())?;
        std::fs::write(&path, bytes).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let want = std::fs::read(&path).map_err(|e| format!("{}: {e} (run with FEDSILO_BLESS=1 to create)", path.display()))?;
    if want == bytes {
        Ok(())
    } else {
        let at = want.iter().zip(bytes).position(|(a, b)| a != b).unwrap_or(want.len().min(bytes.len()));
        Err(format!("{name}: differs from golden at byte {at} ({} vs {} bytes)", bytes.len(), want.len()))
    }
}
