use std::process::ExitCode;

fn main() -> ExitCode {
    let cli = match fvmod_cli::parse_cli(std::env::args_os()) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let result = fvmod_cli::run(&cli);
    if let Err(e) = &result {
        eprintln!("fvmod: {e}");
    }
    ExitCode::from(fvmod_cli::exit_code(&result) as u8)
}
