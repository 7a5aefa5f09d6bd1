use std::process::ExitCode;

fn main() -> ExitCode {
    boss_core::cli::init_logging();
    let code = boss_core::cli::main_with_args(std::env::args_os(), &mut std::io::stdout().lock());
    ExitCode::from(code as u8)
}
