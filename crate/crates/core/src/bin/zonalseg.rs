use std::process::ExitCode;

fn main() -> ExitCode {
    zonalseg::cli::main()
}
