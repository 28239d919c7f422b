use slm_ie::corpus::CorpusError;
use slm_ie::eval::EvalError;
use slm_ie::model::ModelError;
use slm_ie::parser::ParseError;
use slm_ie::pipeline::PipelineError;
use slm_ie::treebank_init::InitError;

/// Error classes with distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("internal: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Data(_) => 4,
            CliError::Internal(_) => 5,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::EmptyCounts(_) => CliError::Internal(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<InitError> for CliError {
    fn from(e: InitError) -> Self {
        match e {
            InitError::Rules { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ParseError> for CliError {
    fn from(e: ParseError) -> Self {
        match e {
            ParseError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::UnknownFrame(_) => CliError::Data(format!("vocabulary mismatch: {e}")),
            EvalError::Alignment { .. } | EvalError::NoFrame(_) => CliError::Data(e.to_string()),
            EvalError::Parse(p) => p.into(),
            EvalError::Constraint(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        // the stage-tagged message is kept; the class comes from the cause
        let class = {
            let mut inner = &e;
            while let PipelineError::Stage { source, .. } | PipelineError::Sentence { source, .. } = inner {
                inner = source;
            }
            match inner {
                PipelineError::Config(_) => 3,
                PipelineError::EmptyCorpus
                | PipelineError::Enrichment { .. }
                | PipelineError::Constraint(_)
                | PipelineError::Corpus(_)
                | PipelineError::Init(_) => 4,
                _ => 5,
            }
        };
        let msg = e.to_string();
        match class {
            3 => CliError::Config(msg),
            4 => CliError::Data(msg),
            _ => CliError::Internal(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
