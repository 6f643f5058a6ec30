use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("IRTFORGE_LOG")).init();
    ExitCode::from(irtforge::cli::run() as u8)
}
