use std::process::ExitCode;

fn main() -> ExitCode {
    geodecoder::cli::main()
}
