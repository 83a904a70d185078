# Init
