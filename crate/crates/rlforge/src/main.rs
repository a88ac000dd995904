use std::process::ExitCode;

fn main() -> ExitCode {
    let code = rlforge::cli::run(std::env::args().collect(), &mut std::io::stdout().lock());
    ExitCode::from(code as u8)
}
