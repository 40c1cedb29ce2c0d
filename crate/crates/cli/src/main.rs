use std::path::PathBuf;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let exe = std::env::current_exe().unwrap_or_else(|_| PathBuf::from("schedtwin"));
    std::process::exit(schedtwin_cli::main_with(std::env::args().collect(), &exe));
}
