use clap::Parser;

fn main() {
    let cli = booklab_cli::commands::Cli::parse();
    if let Err(e) = booklab_cli::commands::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(e.exit_code());
    }
}
