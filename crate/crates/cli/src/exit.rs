use annopipe::Error;

pub const OK: u8 = 0;
pub const INTERNAL: u8 = 1;
pub const USAGE: u8 = 2;
pub const IO: u8 = 3;
pub const DATA: u8 = 4;
pub const FORMAT: u8 = 5;
pub const CONFIG: u8 = 6;
pub const TRAINING: u8 = 7;
pub const PIPELINE: u8 = 8;

/// Exit status for an error, from the first library or I/O error in its
/// cause chain.
pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io { .. } => IO,
                Error::Data { .. } | Error::Encoding(_) => DATA,
                Error::Format(_) | Error::WeightMismatch(_) | Error::Json(_) => FORMAT,
                Error::Config(_) | Error::InvalidArgument(_) => CONFIG,
                Error::Diverged { .. } | Error::NonFinite(_) => TRAINING,
                Error::MissingColumn { .. } | Error::Partition { .. } => PIPELINE,
                _ => INTERNAL,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return IO;
        }
    }
    INTERNAL
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    fn code(e: Error) -> u8 {
        code_for(&anyhow::Error::new(e))
    }

    #[test]
    fn each_error_kind_has_its_code() {
        let io = || std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(code(Error::io("x", io())), IO);
        assert_eq!(
            code(Error::Data {
                path: "a.csv".into(),
                line: 3,
                message: "bad".into()
            }),
            DATA
        );
        assert_eq!(code(Error::Encoding("bad utf-8".into())), DATA);
        assert_eq!(code(Error::Format("magic".into())), FORMAT);
        assert_eq!(code(Error::WeightMismatch(vec!["pooler.weight".into()])), FORMAT);
        assert_eq!(code(Error::Config("x".into())), CONFIG);
        assert_eq!(code(Error::InvalidArgument("x".into())), CONFIG);
        assert_eq!(
            code(Error::Diverged {
                epoch: 1,
                step: 2,
                loss: f64::NAN
            }),
            TRAINING
        );
        assert_eq!(code(Error::NonFinite("grads".into())), TRAINING);
        assert_eq!(
            code(Error::MissingColumn {
                stage: "tokenizer".into(),
                column: "sentence".into()
            }),
            PIPELINE
        );
        assert_eq!(
            code(Error::Partition {
                partition: 1,
                start: 0,
                end: 4,
                message: "boom".into()
            }),
            PIPELINE
        );
        assert_eq!(
            code(Error::Shape {
                op: "matmul",
                lhs: vec![2],
                rhs: vec![3]
            }),
            INTERNAL
        );
        assert_eq!(code_for(&anyhow::Error::new(io())), IO);
        assert_eq!(code_for(&anyhow::anyhow!("plain")), INTERNAL);
    }

    #[test]
    fn context_does_not_hide_the_cause() {
        let e: anyhow::Result<()> = Err(Error::Config("x".into())).context("while loading");
        assert_eq!(code_for(&e.unwrap_err()), CONFIG);
    }
}
