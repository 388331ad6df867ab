use serde::de::DeserializeOwned;
use thiserror::Error;

/// Failure to read a wire document into a validated domain value.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("malformed JSON at {path}: {message}")]
    MalformedJson { path: String, message: String },
    #[error("schema violation at {path}: {rule}")]
    SchemaViolation { path: String, rule: String },
    #[error("empty organ label")]
    EmptyLabel,
}

impl SchemaError {
    pub fn violation(path: impl Into<String>, rule: impl Into<String>) -> Self {
        SchemaError::SchemaViolation {
            path: path.into(),
            rule: rule.into(),
        }
    }

    /// Path of the offending element, `"."` for the document root.
    pub fn path(&self) -> &str {
        match self {
            SchemaError::MalformedJson { path, .. } | SchemaError::SchemaViolation { path, .. } => path,
            SchemaError::EmptyLabel => "organ",
        }
    }

    /// Prefixes the reported path, e.g. when the document is embedded in a
    /// larger request.
    pub fn nested(self, prefix: &str) -> Self {
        let join = |path: String| {
            if path == "." || path.is_empty() {
                prefix.to_string()
            } else {
                format!("{prefix}.{path}")
            }
        };
        match self {
            SchemaError::MalformedJson { path, message } => SchemaError::MalformedJson {
                path: join(path),
                message,
            },
            SchemaError::SchemaViolation { path, rule } => SchemaError::SchemaViolation {
                path: join(path),
                rule,
            },
            other => other,
        }
    }
}

/// Deserializes JSON, classifying failures and recording the offending path.
pub fn from_json_str<T: DeserializeOwned>(doc: &str) -> Result<T, SchemaError> {
    let mut de = serde_json::Deserializer::from_str(doc);
    let value = serde_path_to_error::deserialize(&mut de).map_err(classify)?;
    de.end().map_err(|e| SchemaError::MalformedJson {
        path: ".".into(),
        message: strip_position(&e.to_string()),
    })?;
    Ok(value)
}

/// Same as [`from_json_str`] for an already-parsed value.
pub fn from_json_value<T: DeserializeOwned>(value: serde_json::Value) -> Result<T, SchemaError> {
    serde_path_to_error::deserialize(value).map_err(classify)
}

fn classify(err: serde_path_to_error::Error<serde_json::Error>) -> SchemaError {
    let path = err.path().to_string();
    let inner = err.into_inner();
    let message = strip_position(&inner.to_string());
    match inner.classify() {
        serde_json::error::Category::Data => SchemaError::SchemaViolation { path, rule: message },
        _ => SchemaError::MalformedJson { path, message },
    }
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}
