# Command pipeline package
