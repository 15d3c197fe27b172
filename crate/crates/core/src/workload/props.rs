//! YCSB-compatible `key=value` properties files.

use std::path::Path;
use std::str::FromStr;

use super::{Distribution, WorkloadError, WorkloadSpec};

impl WorkloadSpec {
    /// Overrides fields from a properties text. Blank lines and lines
    /// starting with `#` are skipped; unknown keys are rejected.
    pub fn apply_properties(&mut self, text: &str) -> Result<(), WorkloadError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) =
                line.split_once('=')
                    .ok_or_else(|| WorkloadError::MalformedLine {
                        line: n + 1,
                        text: raw.to_string(),
                    })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "recordcount" => self.record_count = parse(key, value)?,
                "operationcount" => self.operation_count = parse(key, value)?,
                "readproportion" => self.read_proportion = parse(key, value)?,
                "updateproportion" => self.update_proportion = parse(key, value)?,
                "readmodifywriteproportion" => self.rmw_proportion = parse(key, value)?,
                "fieldcount" => self.field_count = parse(key, value)?,
                "fieldlength" => self.field_length = parse(key, value)?,
                "requestdistribution" => {
                    self.distribution = value
                        .parse::<Distribution>()
                        .map_err(|()| invalid(key, value))?
                }
                _ => return Err(WorkloadError::UnknownProperty(key.to_string())),
            }
        }
        self.validate()
    }

    pub fn apply_properties_file(&mut self, path: &Path) -> Result<(), WorkloadError> {
        let text = std::fs::read_to_string(path).map_err(|e| WorkloadError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        self.apply_properties(&text)
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, WorkloadError> {
    value.parse().map_err(|_| invalid(key, value))
}

fn invalid(key: &str, value: &str) -> WorkloadError {
    WorkloadError::InvalidProperty {
        key: key.to_string(),
        value: value.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_ycsb_style_file() {
        let mut spec = WorkloadSpec::default();
        spec.apply_properties(
            "# workload f\n\
             recordcount=100\n\
             operationcount = 500\n\
             readproportion=0.5\n\
             updateproportion=0\n\
             readmodifywriteproportion=0.5\n\
             requestdistribution=uniform\n\
             \n\
             fieldcount=4\n\
             fieldlength=16\n",
        )
        .unwrap();
        assert_eq!(spec.record_count, 100);
        assert_eq!(spec.operation_count, 500);
        assert_eq!(spec.rmw_proportion, 0.5);
        assert_eq!(spec.distribution, Distribution::Uniform);
        assert_eq!((spec.field_count, spec.field_length), (4, 16));
    }

    #[test]
    fn rejects_unknown_and_bad_values() {
        let mut spec = WorkloadSpec::default();
        assert_eq!(
            spec.apply_properties("scanproportion=0.1"),
            Err(WorkloadError::UnknownProperty("scanproportion".into()))
        );
        assert!(matches!(
            spec.apply_properties("recordcount=lots"),
            Err(WorkloadError::InvalidProperty { .. })
        ));
        assert!(matches!(
            spec.apply_properties("requestdistribution=latest"),
            Err(WorkloadError::InvalidProperty { .. })
        ));
        assert!(matches!(
            spec.apply_properties("recordcount"),
            Err(WorkloadError::MalformedLine { line: 1, .. })
        ));
        assert!(matches!(
            spec.apply_properties("readproportion=0.7"),
            Err(WorkloadError::ProportionSum(_))
        ));
    }
}
