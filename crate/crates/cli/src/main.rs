use clap::{CommandFactory, FromArgMatches};
use flownas_cli::config::RunConfig;
use flownas_cli::{exit_code, run, Cli};

fn main() {
    let help = format!(
        "Every default lives in the run configuration; without --config or FNAS_CONFIG it is:\n{}",
        RunConfig::default().to_json()
    );
    let matches = Cli::command().after_long_help(help).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(true) => {}
        Ok(false) => std::process::exit(1),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}
