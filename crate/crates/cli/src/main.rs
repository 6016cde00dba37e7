use std::process::ExitCode;

fn main() -> ExitCode {
    edgesim_cli::main_entry()
}
