//! CSV files and plot scripts. Every CSV starts with a
//! `# levydrift <kind> v<version>` line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub fn schema_line(kind: &str) -> String {
    format!("# levydrift {kind} v{SCHEMA_VERSION}")
}

/// Error text made safe for a CSV cell.
pub fn cell(text: &str) -> String {
    text.replace([',', '\n', '\r'], ";")
}

pub fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(kind: &str, header: &str) -> Csv {
        let mut text = schema_line(kind);
        text.push('\n');
        text.push_str(header);
        text.push('\n');
        Csv { text }
    }

    pub fn row(&mut self, line: &str) {
        self.text.push_str(line);
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, &self.text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// Gnuplot script drawing the increments above the path.
pub fn trajectory_plot_script(trajectory: &str, increments: &str, png: &str) -> String {
    let mut s = String::new();
    writeln!(s, "set datafile separator ','").unwrap();
    writeln!(s, "set terminal pngcairo size 1000,700").unwrap();
    writeln!(s, "set output '{png}'").unwrap();
    writeln!(s, "set multiplot layout 2,1").unwrap();
    writeln!(s, "set xlabel 't'").unwrap();
    writeln!(s, "set title 'Increments'").unwrap();
    writeln!(s, "plot '{increments}' skip 2 using 2:3 with impulses notitle").unwrap();
    writeln!(s, "set title 'Trajectory'").unwrap();
    writeln!(s, "plot '{trajectory}' skip 3 using 2:3 with lines notitle").unwrap();
    writeln!(s, "unset multiplot").unwrap();
    s
}
