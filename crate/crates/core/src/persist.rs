//! Versioned JSON envelopes shared by every serialisable model.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    format: &'a str,
    version: u32,
    model: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    format: String,
    version: u32,
    model: T,
}

pub fn to_json<T: Serialize>(format: &str, model: &T) -> Result<String> {
    Ok(serde_json::to_string(&EnvelopeOut {
        format,
        version: FORMAT_VERSION,
        model,
    })?)
}

pub fn from_json<T: DeserializeOwned>(format: &str, text: &str) -> Result<T> {
    let env: EnvelopeIn<T> = serde_json::from_str(text)?;
    if env.format != format {
        return Err(Error::Schema(format!(
            "expected a '{format}' document, found '{}'",
            env.format
        )));
    }
    if env.version != FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported {format} version {} (this build reads {FORMAT_VERSION})",
            env.version
        )));
    }
    Ok(env.model)
}
