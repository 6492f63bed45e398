use clap::Parser;

fn main() {
    let cli = banditxd::cli::Cli::parse();
    std::process::exit(banditxd::cli::main_with(cli));
}
