import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'sslbench.settings')
django.setup()
